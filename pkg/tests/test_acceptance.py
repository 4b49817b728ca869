"""Acceptance criteria 1-8.

Each test records one PASS/FAIL line (printed in the terminal summary).
Run on its own with ``python3 -m pytest tests/test_acceptance.py -v``.
"""

import filecmp
import math
import time

import numpy as np
import pytest
from scipy import integrate

from partbias import adjust, cli, model, simgen
from partbias.adjust import SampleEstimates
from partbias.analysis import adjust_estimates, analyze_sumstats
from partbias.model import PairParams, ParticipationParams, PhenotypeParams
from partbias.truncnorm import make_selection_context

C1_ALPHAS = (0.02, 0.055, 0.1, 0.25, 0.5, 1.0)


# ---------------------------------------------------------------- oracles


def quad_truncated_moments(alpha):
    """Mean and variance of N(0,1) given X > t_alpha, by quadrature."""
    t = make_selection_context(alpha).t_alpha
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    kw = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    z = integrate.quad(phi, t, math.inf, **kw)[0]
    m1 = integrate.quad(lambda x: x * phi(x), t, math.inf, **kw)[0] / z
    var = integrate.quad(lambda x: (x - m1) ** 2 * phi(x), t, math.inf, **kw)[0] / z
    return m1, var


def quad_rho_from_delta(delta, alpha):
    """Invert delta = rho*E[X|sel] / sd(Y|sel) by bisection with quadrature moments."""
    m1, var = quad_truncated_moments(alpha)
    f = lambda r: r * m1 / math.sqrt(1 - r * r * (1 - var)) - delta
    lo, hi = -1.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < 0 else (lo, mid)
    return 0.5 * (lo + hi)


def psd_grid(n, seed=20240):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        h2x = rng.uniform(0.05, 0.5)
        y1 = PhenotypeParams(rng.uniform(0.1, 0.9), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8))
        y2 = PhenotypeParams(rng.uniform(0.1, 0.9), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8))
        vg, ve = rng.uniform(-0.8, 0.8, 2)
        if model.is_psd_pair(y1, y2, vg, ve):
            out.append((ParticipationParams(h2x), PairParams(y1, y2, vg, ve)))
    return out


# ------------------------------------------------------------ criterion 1


def _round_trip_errors(points):
    err = {a: dict(h2=0.0, rho_g=0.0, rho_e=0.0, varphi_g=0.0) for a in C1_ALPHAS}
    for part, pair in points:
        for a in C1_ALPHAS:
            sel = make_selection_context(a)
            ests = []
            for y in (pair.y1, pair.y2):
                est = SampleEstimates(
                    model.apparent_h2(part, y, sel),
                    model.apparent_participation_gcor(part, y, sel),
                    model.mean_shift(y, part, sel),
                )
                adj = adjust.adjust_phenotype(est, part.h2_x, sel)
                e = err[a]
                e["h2"] = max(e["h2"], abs(adj.h2_y_tilde - y.h2_y))
                e["rho_g"] = max(e["rho_g"], abs(adj.rho_g_tilde - y.rho_g))
                e["rho_e"] = max(e["rho_e"], abs(adj.rho_e_tilde - y.rho_e))
                ests.append(est)
            phi, _ = adjust.adjust_pair(*ests, model.apparent_pair_gcor(part, pair, sel), part.h2_x, sel)
            err[a]["varphi_g"] = max(err[a]["varphi_g"], abs(phi - pair.varphi_g))
    return err


@pytest.fixture(scope="module")
def c1_result():
    points = psd_grid(600)
    t0 = time.perf_counter()
    err = _round_trip_errors(points)
    return points, err, time.perf_counter() - t0


def test_c1_round_trip(c1_result, acceptance):
    points, err, secs = c1_result
    worst = max(v for e in err.values() for v in e.values())
    worst_sel = max(v for a, e in err.items() if a < 1 for v in e.values())
    worst_full = max(v for k, v in err[1.0].items() if k != "rho_e")
    ok = worst <= 1e-10 and secs < 10 and len(points) >= 500
    acceptance(
        1,
        ok,
        f"{len(points)} PSD points x {len(C1_ALPHAS)} alphas in {secs:.2f}s; "
        f"max err alpha<1 = {worst_sel:.1e}; alpha=1 (h2, rho_g, varphi_g) = {worst_full:.1e}; "
        f"alpha=1 rho_e = {err[1.0]['rho_e']:.2e} (not identifiable without selection)",
    )
    # the identifiable part of the criterion holds exactly
    assert worst_sel <= 1e-10 and worst_full <= 1e-10 and secs < 10


@pytest.mark.xfail(strict=True, reason="rho_e needs rho, and delta=0 carries no information on rho at alpha=1")
def test_c1_rho_e_recovered_without_selection(c1_result):
    _, err, _ = c1_result
    assert err[1.0]["rho_e"] <= 1e-10


# ------------------------------------------------------------ criterion 2


def test_c2_truncation_identity(acceptance):
    worst = 0.0
    for a in np.round(np.arange(0.01, 1.0, 0.01), 2):
        _, var = quad_truncated_moments(a)
        worst = max(worst, abs((1 - make_selection_context(a).xi) - var))
    half = abs(make_selection_context(0.5).xi - (1 - (1 - 2 / math.pi)))
    ok = worst <= 1e-8 and half <= 1e-12
    acceptance(2, ok, f"max |1-xi - quad var| over 0.01..0.99 = {worst:.1e}; |xi(0.5) - 2/pi| = {half:.1e}")
    assert ok


# ------------------------------------------------------------ criterion 3

C3_PART = ParticipationParams(0.125)
C3_PAIR = PairParams(PhenotypeParams(0.5, 0.3, 0.3), PhenotypeParams(0.5, 0.5, 0.1), 0.4, 0.2)
C3_SEED = 7000


def test_c3_monte_carlo_oracle(acceptance):
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    keys = [("h2_y1", "h2_y1_pb"), ("h2_y2", "h2_y2_pb"), ("rho_g1", "rho_g1_pb"), ("rho_g2", "rho_g2_pb"),
            ("delta1", "delta1"), ("delta2", "delta2"), ("varphi_g", "varphi_g_pb")]
    for i, a in enumerate((0.05, 0.1, 0.25, 0.5)):
        q = simgen.empirical_sample_quantities(simgen.simulate_mvn(C3_PART, C3_PAIR, a, 1_000_000, seed=C3_SEED + i))
        tr = simgen.truth(C3_PART, C3_PAIR, a)
        for emp, th in keys:
            z = abs(q[emp] - tr[th]) / q.se[emp]
            if z > worst:
                worst, where = z, f"{emp} at alpha={a}"
    secs = time.perf_counter() - t0
    ok = worst <= 3 and secs < 120
    acceptance(3, ok, f"n=1e6, 28 checks, max |z| = {worst:.2f} ({where}); {secs:.1f}s")
    assert ok


# ------------------------------------------------------------ criterion 4


def test_c4_direction_of_bias(acceptance):
    alphas = [0.01, 0.055, 0.1, 0.25, 0.5, 0.9]
    vals = np.linspace(-0.9, 0.9, 19)
    n_checks, bad = 0, []
    for h2x in (0.05, 0.125, 0.4):
        part = ParticipationParams(h2x)
        for h2y in (0.1, 0.5, 0.9):
            for a in alphas:
                for r in vals:
                    y = PhenotypeParams(h2y, r, 0.0)
                    n_checks += 1
                    if model.apparent_h2(part, y, a) > h2y + 1e-15:
                        bad.append(("rho_e=0", h2x, h2y, a, r))
                    y = PhenotypeParams(h2y, 0.0, r)
                    n_checks += 1
                    if model.apparent_h2(part, y, a) < h2y - 1e-15:
                        bad.append(("rho_g=0 h2", h2x, h2y, a, r))
                    if r != 0:
                        n_checks += 1
                        if np.sign(model.apparent_participation_gcor(part, y, a)) != -np.sign(r):
                            bad.append(("rho_g=0 sign", h2x, h2y, a, r))
                # delta against rho over a dense set of (rho_g, rho_e)
                ys = [PhenotypeParams(h2y, g, e) for g in vals for e in vals]
                rho = np.array([y.rho(part) for y in ys])
                d = np.array([model.mean_shift(y, part, a) for y in ys])
                order = np.argsort(rho, kind="stable")
                rs, ds = rho[order], d[order]
                n_checks += 1
                strictly = np.all((np.diff(ds) > 0) | (np.diff(rs) == 0))
                if not strictly:
                    bad.append(("delta monotone", h2x, h2y, a))
    ok = not bad
    acceptance(4, ok, f"{n_checks} property checks, {len(bad)} violations")
    assert ok, bad[:5]


# ------------------------------------------------------- criteria 5 and 6

E2E_PART = ParticipationParams(0.125)
E2E_PAIR = PairParams(PhenotypeParams(0.5, 0.0, 0.8), PhenotypeParams(0.5, 0.5, 0.5), 0.4, 0.2)
E2E_ALPHA = 0.1
E2E_REPS = 100
E2E_N, E2E_M = 50_000, 5_000
QTY = [("Y1", "h2", "h2_y1"), ("Y2", "h2", "h2_y2"), ("Y1", "rho_g", "rho_g1"), ("Y2", "rho_g", "rho_g2"),
       ("Y1|Y2", "varphi_g", "varphi_g")]


def _replicate(seed):
    c = simgen.simulate_snp_cohort(E2E_PART, E2E_PAIR, E2E_ALPHA, E2E_N, E2E_M, seed=seed)
    traits = [g.stats for g in simgen.gwas_on_selected(c)]
    d = simgen.observed_mean_shifts(c)
    r12 = float(np.corrcoef(c.y[c.selected].T)[0, 1])
    res = analyze_sumstats(
        simgen.participation_gwas(c).stats, traits, {"Y1": d[0], "Y2": d[1]}, E2E_ALPHA, E2E_PART.h2_x,
        h2_intercept=1.0, gcov_intercept=0.0, pair_intercepts={("Y1", "Y2"): r12},
    )
    out = []
    for ph, kind, _ in QTY:
        r = res.get(ph, kind)
        out.append([r.original, r.adjusted, r.se_original, r.se_adjusted])
    return out


@pytest.fixture(scope="module")
def e2e():
    t0 = time.perf_counter()
    R = np.array([_replicate(s) for s in range(E2E_REPS)])  # reps x qty x 4
    return R, time.perf_counter() - t0


def test_c5_end_to_end(e2e, acceptance):
    R, secs = e2e
    tr = simgen.truth(E2E_PART, E2E_PAIR, E2E_ALPHA)
    parts, ok = [], secs < 1800
    for j, (ph, kind, key) in enumerate(QTY):
        orig, adj = R[:, j, 0], R[:, j, 1]
        pop, pb = tr[key], tr[key + "_pb"]
        sd = orig.std(ddof=1)
        if kind != "varphi_g":
            qualifies = abs(pb - pop) > 2 * sd
            closer = float(np.mean(np.abs(adj - pop) < np.abs(orig - pop)))
            if qualifies:
                ok &= closer >= 0.95
                parts.append(f"{ph} {kind}: bias {pb - pop:+.3f} ({abs(pb - pop) / sd:.1f} SD), closer {closer:.0%}")
            else:
                parts.append(f"{ph} {kind}: bias {pb - pop:+.3f} below 2 SD, not scored")
        # LDSC sample-parameter estimates against the forward model
        mean_se = R[:, j, 2].mean()
        within = abs(orig.mean() - pb) <= 2 * mean_se
        ok &= within
        parts.append(f"LDSC {ph} {kind} mean {orig.mean():.3f} vs {pb:.3f} (2 SE = {2 * mean_se:.3f})")
    se_ratio = [R[:, j, 3].mean() / R[:, j, 2].mean() for j in range(len(QTY))]
    parts.append("mean SE adjusted/original " + ", ".join(f"{r:.2f}" for r in se_ratio))
    acceptance(5, ok, f"{E2E_REPS} reps in {secs:.0f}s; " + "; ".join(parts))
    assert ok


def test_c6_jackknife_calibration(e2e, acceptance):
    R, _ = e2e
    ratios = {}
    for j, (ph, kind, _) in enumerate(QTY[:2]):
        ratios[ph] = R[:, j, 3].mean() / R[:, j, 1].std(ddof=1)
    ok = all(1 / 1.5 <= r <= 1.5 for r in ratios.values())
    acceptance(6, ok, "adjusted h2 mean jackknife SE / replicate SD: "
               + ", ".join(f"{k} {v:.2f}" for k, v in ratios.items()))
    assert ok


# ------------------------------------------------------------ criterion 7

# phenotype: (delta, h2 original, h2 SE, rho_g original, rho_g SE); reference adjusted h2 and rho_g
COHORT_ROWS = {
    "BMI": (-0.138, 0.251, 0.012, -0.219, 0.073, 0.253, -0.246),
    "HGT": (0.237, 0.544, 0.026, 0.024, 0.058, 0.540, 0.070),
    "WC": (-0.419, 0.208, 0.010, -0.244, 0.080, 0.216, -0.355),
    "HC": (-0.336, 0.231, 0.012, -0.153, 0.068, 0.235, -0.245),
    "EA": (0.438, 0.203, 0.007, 0.366, 0.096, 0.217, 0.467),
    "ES": (0.089, 0.021, 0.003, 0.352, 0.160, 0.022, 0.414),
    "INC": (0.235, 0.080, 0.004, 0.356, 0.109, 0.086, 0.443),
    "SMC": (-0.413, 0.127, 0.008, -0.102, 0.086, 0.131, -0.262),
    "SMP": (-0.043, 0.117, 0.005, -0.011, 0.070, 0.117, -0.029),
    "ALC": (0.131, 0.080, 0.004, -0.249, 0.091, 0.077, -0.169),
    "WKP": (0.073, 0.077, 0.004, 0.201, 0.082, 0.078, 0.228),
    "WKT": (0.093, 0.041, 0.003, -0.291, 0.119, 0.039, -0.211),
}
USER_H2X = 0.125  # external input supplied by the user


def test_c7_cohort_chain(acceptance):
    alpha = 0.055
    table = {
        k: {"h2": v[1], "h2_se": v[2], "rho_g": v[3], "rho_g_se": v[4], "delta": v[0]} for k, v in COHORT_ROWS.items()
    }
    res = adjust_estimates(table, USER_H2X, alpha)
    finite = all(math.isfinite(r.adjusted) for r in res.rows)
    rho = adjust.rho_from_delta(-0.138, alpha)
    oracle = quad_rho_from_delta(-0.138, alpha)
    diff = abs(rho - oracle)
    # sign agreement with the reference adjusted rho_g (informative only)
    signs = sum(np.sign(res.get(k, "rho_g").adjusted) == np.sign(v[6]) for k, v in COHORT_ROWS.items())
    h2_dev = max(abs(res.get(k, "h2").adjusted - v[5]) for k, v in COHORT_ROWS.items())
    rg_dev = max(abs(res.get(k, "rho_g").adjusted - v[6]) for k, v in COHORT_ROWS.items())
    ok = finite and diff <= 1e-10
    acceptance(
        7,
        ok,
        f"12 phenotypes adjusted; BMI rho_hat = {rho:.12f}, |diff vs quadrature| = {diff:.1e}; "
        f"with h2x={USER_H2X}: {signs}/12 adjusted rho_g signs match, max |h2 - reference| = {h2_dev:.4f}, "
        f"max |rho_g - reference| = {rg_dev:.4f} (not asserted)",
    )
    assert ok


# ------------------------------------------------------------ criterion 8

C8_CONFIG = """
[participation]
alpha = 0.1
h2x = 0.125

[phenotype Y1]
h2 = 0.5
rho_g = 0.3
rho_e = 0.3

[phenotype Y2]
h2 = 0.4
rho_g = -0.2
rho_e = 0.1

[pair Y1|Y2]
varphi_g = 0.3
varphi_e = 0.1

[simulation]
n = 6000
m = 1000
blocks = 50
"""


def _pipeline(tmp_path, tag, threads):
    cfg = tmp_path / "sim.ini"
    cfg.write_text(C8_CONFIG)
    sim = tmp_path / f"sim_{tag}"
    adj = tmp_path / f"adj_{tag}"
    assert cli.main(["simulate", "--config", str(cfg), "--seed", "11", "--out-dir", str(sim),
                     "--threads", str(threads)]) == 0
    assert cli.main(["adjust", "--config", str(sim / "adjust.ini"), "--out-dir", str(adj)]) == 0
    return sim, adj


def test_c8_determinism(tmp_path, acceptance):
    a = _pipeline(tmp_path, "a", 1)
    b = _pipeline(tmp_path, "b", 2)
    files = ["sumstats/participation.sumstats", "sumstats/Y1.sumstats", "sumstats/Y2.sumstats",
             "meanshift.csv", "cohort_summary.csv", "truth.csv", "adjust.ini"]
    pairs = [(a[0] / f, b[0] / f) for f in files]
    pairs += [(a[1] / f, b[1] / f) for f in ("results.csv", "results.jsonl", "pairs.csv")]
    same = [filecmp.cmp(x, y, shallow=False) for x, y in pairs]
    ok = all(same)
    diffs = [str(x.name) for (x, _), s in zip(pairs, same) if not s]
    acceptance(8, ok, f"{len(pairs)} files byte-identical across two runs (threads 1 vs 2)"
               + (f"; differing: {diffs}" if diffs else ""))
    assert ok
