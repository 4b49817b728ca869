"""Command-line interface.

Subcommands: ``forward-curves``, ``adjust``, ``simulate``, ``meanshift``.
Exit status is 0 on success, 2 for bad input and 3 for numerical or
degenerate-selection failures; errors are also written to stderr as one JSON
object per line.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import math
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, dataio, model, simgen
from .analysis import adjust_estimates, analyze_sumstats
from .jackknife import JackknifeError
from .ldsc import DEFAULT_BLOCKS, AlleleMismatchError
from .model import DegenerateSelectionError, PairParams, ParticipationParams, PhenotypeParams
from .truncnorm import as_context

log = logging.getLogger("partbias")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"
DEFAULT_ALPHAS = [round(0.01 * k, 2) for k in range(1, 101)]


class InputError(ValueError):
    pass


# ------------------------------------------------------------- manifest


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command, args, inputs, outputs, extra=None) -> Path:
    import scipy

    man = {
        "command": command,
        "config": str(args.config) if args.config else None,
        "seed": args.seed,
        "blocks": args.blocks,
        "threads": args.threads,
        "versions": {
            "partbias": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {Path(p).name: sha256(p) for p in outputs},
    }
    if extra:
        man.update(extra)
    path = out_dir / MANIFEST
    path.write_text(json.dumps(man, indent=2) + "\n", encoding="utf-8")
    return path


def _resolve(cfg: dataio.Config, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.path).parent / p


def _load_config(args) -> dataio.Config:
    if not args.config:
        raise InputError("--config is required")
    if not Path(args.config).is_file():
        raise InputError(f"config file not found: {args.config}")
    return dataio.Config.read(args.config)


def _participation(cfg, need_h2x=True):
    alpha = cfg.get_float("participation", "alpha")
    if alpha is None:
        raise InputError(f"{cfg.path}: [participation] alpha is required")
    h2x = cfg.get_float("participation", "h2x")
    if need_h2x and (h2x is None or math.isnan(h2x)):
        raise InputError(f"{cfg.path}: [participation] h2x is required (no default)")
    return alpha, h2x


# ---------------------------------------------------------- forward-curves


def _curve_rows(part, alphas, h2y, grid):
    """Rows for every (alpha, parameter) combination; invalid points become warning rows."""
    rows_h2, rows_rg = [], []
    for (rho_g, rho_e), alpha in itertools.product(grid, alphas):
        try:
            y = PhenotypeParams(h2y, rho_g, rho_e)
        except ValueError as exc:
            rows_h2.append([alpha, rho_g, rho_e, h2y, math.nan, math.nan, f"invalid: {exc}"])
            continue
        sel = as_context(alpha)
        try:
            h_pb = model.apparent_h2(part, y, sel)
            d = model.mean_shift(y, part, sel)
            rows_h2.append([alpha, rho_g, rho_e, y.h2_y, h_pb, d, ""])
            rg_pb = model.apparent_participation_gcor(part, y, sel)
            rows_rg.append([alpha, rho_g, rho_e, y.rho_g, rg_pb, ""])
        except DegenerateSelectionError as exc:
            rows_h2.append([alpha, rho_g, rho_e, y.h2_y, math.nan, math.nan, f"degenerate: {exc}"])
            rows_rg.append([alpha, rho_g, rho_e, y.rho_g, math.nan, f"degenerate: {exc}"])
    return rows_h2, rows_rg


def cmd_forward_curves(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    h2x = cfg.get_float("participation", "h2x")
    if h2x is None:
        raise InputError(f"{cfg.path}: [participation] h2x is required")
    part = ParticipationParams(h2x)
    sec = "curves"
    alphas = cfg.get_floats(sec, "alphas", DEFAULT_ALPHAS)
    h2y = cfg.get_float(sec, "h2y", 0.5)
    rho_gs = cfg.get_floats(sec, "rho_g", [-0.5, 0.0, 0.5])
    rho_es = cfg.get_floats(sec, "rho_e", [-0.5, 0.0, 0.5])
    rows_h2, rows_rg = _curve_rows(part, alphas, h2y, list(itertools.product(rho_gs, rho_es)))

    # pairwise genetic correlation: both phenotypes share h2y
    rows_pair = []
    rg1s = cfg.get_floats(sec, "rho_g1", [0.0, 0.3])
    re1s = cfg.get_floats(sec, "rho_e1", [0.0, 0.3])
    rg2s = cfg.get_floats(sec, "rho_g2", [0.0, 0.3])
    re2s = cfg.get_floats(sec, "rho_e2", [0.0, 0.3])
    vgs = cfg.get_floats(sec, "varphi_g", [0.0, 0.5])
    ves = cfg.get_floats(sec, "varphi_e", [0.0])
    n_bad = 0
    for rg1, re1, rg2, re2, vg, ve in itertools.product(rg1s, re1s, rg2s, re2s, vgs, ves):
        key = [rg1, re1, rg2, re2, vg, ve]
        try:
            pair = PairParams(PhenotypeParams(h2y, rg1, re1), PhenotypeParams(h2y, rg2, re2), vg, ve)
        except ValueError as exc:
            n_bad += 1
            rows_pair.append([math.nan] + key + [vg, math.nan, f"skipped: {exc}"])
            continue
        for alpha in alphas:
            try:
                v = model.apparent_pair_gcor(part, pair, alpha)
                rows_pair.append([alpha] + key + [vg, v, ""])
            except DegenerateSelectionError as exc:
                rows_pair.append([alpha] + key + [vg, math.nan, f"degenerate: {exc}"])
    if n_bad:
        log.warning("%d non-PSD pair grid point(s) skipped", n_bad)

    files = [out / "curves_h2.csv", out / "curves_rho_g.csv", out / "curves_varphi_g.csv"]
    dataio.write_records(files[0], ["alpha", "rho_g", "rho_e", "h2_y_population", "h2_y_pb", "delta", "warning"], rows_h2)
    dataio.write_records(files[1], ["alpha", "rho_g", "rho_e", "rho_g_population", "rho_g_pb", "warning"], rows_rg)
    dataio.write_records(
        files[2],
        ["alpha", "rho_g1", "rho_e1", "rho_g2", "rho_e2", "varphi_g", "varphi_e", "varphi_g_population", "varphi_g_pb", "warning"],
        rows_pair,
    )
    write_manifest(out, "forward-curves", args, [args.config], files)
    return EXIT_OK


# ------------------------------------------------------------------ adjust


def _deltas(cfg, args, names):
    deltas, dse, flags = {}, {}, {}
    table = {}
    if args.meanshift:
        table = dataio.read_mean_shifts(args.meanshift)
    elif cfg.get("participation", "meanshift"):
        table = dataio.read_mean_shifts(_resolve(cfg, cfg.get("participation", "meanshift")))
    sections = cfg.phenotype_sections()
    for name in names:
        d = cfg.get_float(sections[name], "delta")
        if d is None and name in table:
            d = table[name].delta
            flags[name] = table[name].flag
        if d is None or math.isnan(d):
            raise InputError(f"mean shift (delta) missing for phenotype {name!r}")
        deltas[name] = d
        se = cfg.get_float(sections[name], "delta_se")
        if se:
            dse[name] = se
    return deltas, dse, flags


def _pairs_table(result, n_traits):
    """Pairwise rows in matrix order with a Bonferroni flag."""
    n_pairs = max(n_traits * (n_traits - 1) // 2, 1)
    thr = 0.05 / n_pairs
    rows = []
    for r in result.pair_rows():
        a, b = r.phenotype.split("|", 1)
        rows.append(
            [a, b, r.original, r.adjusted, r.se_original, r.se_adjusted, r.p_original, r.p_adjusted,
             int(r.p_original < thr) if math.isfinite(r.p_original) else "",
             int(r.p_adjusted < thr) if math.isfinite(r.p_adjusted) else "",
             r.warning]
        )
    header = ["phenotype_a", "phenotype_b", "original", "adjusted", "se_original", "se_adjusted",
              "p_original", "p_adjusted", "bonferroni_original", "bonferroni_adjusted", "warning"]
    return header, rows, thr


def _sign_changes(result):
    out = []
    for r in result.rows:
        if r.estimate_type in ("rho_g", "varphi_g") and all(map(math.isfinite, (r.original, r.adjusted))):
            if r.original * r.adjusted < 0:
                out.append(f"{r.phenotype}:{r.estimate_type}")
    return out


def cmd_adjust(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    alpha, h2x = _participation(cfg)
    h2x_se = cfg.get_float("participation", "h2x_se")
    sections = cfg.phenotype_sections()
    if not sections:
        raise InputError(f"{cfg.path}: no [phenotype NAME] sections")
    names = list(sections)
    deltas, dse, flags = _deltas(cfg, args, names)
    inputs = [Path(args.config)] + ([Path(args.meanshift)] if args.meanshift else [])
    with_stats = [n for n in names if cfg.get(sections[n], "sumstats")]
    if with_stats and len(with_stats) != len(names):
        missing = sorted(set(names) - set(with_stats))
        raise InputError(f"sumstats missing for phenotype(s): {', '.join(missing)}")

    if with_stats:
        part_path = cfg.get("participation", "sumstats")
        if not part_path:
            raise InputError(f"{cfg.path}: [participation] sumstats is required with trait sumstats")
        p = _resolve(cfg, part_path)
        participation = dataio.read_sumstats(p, "participation")
        inputs.append(p)
        traits = []
        for n in names:
            tp = _resolve(cfg, cfg.get(sections[n], "sumstats"))
            traits.append(dataio.read_sumstats(tp, n))
            inputs.append(tp)
        ld = None
        if cfg.get("ldsc", "ld_scores"):
            lp = _resolve(cfg, cfg.get("ldsc", "ld_scores"))
            ld = dataio.read_ld_scores(lp)
            inputs.append(lp)
        blocks = args.blocks or cfg.get_int("ldsc", "blocks", DEFAULT_BLOCKS)
        pair_icpt = {}
        for (a, b), sec in cfg.pair_sections().items():
            v = cfg.get_float(sec, "intercept")
            if v is not None:
                pair_icpt[(a, b)] = v
        result = analyze_sumstats(
            participation,
            traits,
            deltas,
            alpha,
            h2x,
            ld=ld,
            n_blocks=blocks,
            h2_intercept=cfg.get_float("ldsc", "h2_intercept"),
            gcov_intercept=cfg.get_float("ldsc", "gcov_intercept"),
            pair_intercepts=pair_icpt,
            include_pairs=cfg.get_bool("ldsc", "pairs", True),
            h2_x_se=h2x_se,
            delta_se=dse or None,
        )
    else:
        table = {}
        for n in names:
            s = sections[n]
            table[n] = {
                "h2": cfg.require_float(s, "h2"),
                "rho_g": cfg.require_float(s, "rho_g"),
                "delta": deltas[n],
                "h2_se": cfg.get_float(s, "h2_se", math.nan),
                "rho_g_se": cfg.get_float(s, "rho_g_se", math.nan),
            }
        pairs = {}
        for (a, b), sec in cfg.pair_sections().items():
            for who in (a, b):
                if who not in table:
                    raise InputError(f"[pair {a}|{b}] refers to unknown phenotype {who!r}")
            pairs[(a, b)] = cfg.require_float(sec, "varphi_g")
        result = adjust_estimates(table, h2x, alpha, pairs)

    for r in result.rows:
        f = flags.get(r.phenotype)
        if f:
            r.warning = ";".join(x for x in (r.warning, f) if x)
    files = dataio.write_analysis(out, result)
    header, prow, thr = _pairs_table(result, len(names))
    if prow:
        files.append(out / "pairs.csv")
        dataio.write_records(files[-1], header, prow)
    changed = _sign_changes(result)
    if changed:
        log.warning("adjustment changed the sign of: %s", ", ".join(changed))
    else:
        log.info("no estimated correlation changed sign after adjustment")
    write_manifest(
        out, "adjust", args, inputs, files,
        {"sign_changes": changed, "bonferroni_threshold": thr, "notes": result.notes},
    )
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def _sim_params(cfg):
    sections = cfg.phenotype_sections()
    if not 1 <= len(sections) <= 2:
        raise InputError("simulate supports one or two [phenotype NAME] sections")
    ys = []
    for name, sec in sections.items():
        ys.append(
            PhenotypeParams(
                cfg.require_float(sec, "h2"),
                cfg.get_float(sec, "rho_g", 0.0),
                cfg.get_float(sec, "rho_e", 0.0),
            )
        )
    names = list(sections)
    if len(ys) == 1:
        return ys[0], names
    vg = ve = 0.0
    for (a, b), sec in cfg.pair_sections().items():
        if {a, b} == set(names):
            vg = cfg.get_float(sec, "varphi_g", 0.0)
            ve = cfg.get_float(sec, "varphi_e", 0.0)
    return PairParams(ys[0], ys[1], vg, ve), names


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    alpha, h2x = _participation(cfg)
    part = ParticipationParams(h2x)
    params, names = _sim_params(cfg)
    sec = "simulation"
    seed = args.seed if args.seed is not None else cfg.get_int(sec, "seed")
    if seed is None:
        raise InputError("a seed is required (--seed or [simulation] seed)")
    n = cfg.get_int(sec, "n", 50_000)
    m = cfg.get_int(sec, "m", 5_000)
    n_ref = cfg.get_int(sec, "n_ref", n)
    threads = args.threads or cfg.get_int(sec, "threads", 1)
    ld_block = cfg.get_int(sec, "ld_block")
    fr = cfg.get_floats(sec, "freq_range", [0.05, 0.95])
    blocks = args.blocks or cfg.get_int(sec, "blocks", DEFAULT_BLOCKS)

    cohort = simgen.simulate_snp_cohort(
        part, params, alpha, n, m, seed, n_ref=n_ref, freq_range=tuple(fr),
        ld_block=ld_block, threads=threads, trait_names=names,
    )
    (out / "sumstats").mkdir(parents=True, exist_ok=True)
    files = []
    pg = simgen.participation_gwas(cohort)
    files.append(out / "sumstats" / "participation.sumstats")
    dataio.write_sumstats(files[-1], pg.stats)
    for g in simgen.gwas_on_selected(cohort):
        files.append(out / "sumstats" / f"{g.stats.trait}.sumstats")
        dataio.write_sumstats(files[-1], g.stats)
    files.append(out / "ld_scores.txt")
    dataio.write_ld_scores(files[-1], cohort.ld)

    shifts = simgen.observed_mean_shifts(cohort)
    ns = int(cohort.selected.sum())
    recs = [dataio.MeanShiftRecord(nm, float(d), float(alpha), ns, n_ref) for nm, d in zip(names, shifts)]
    files.append(out / "meanshift.csv")
    dataio.write_mean_shifts(files[-1], recs)

    # cohort summary: per trait means and SDs in participants and reference
    ys, ry = cohort.y[cohort.selected], cohort.ref_y
    summ = [["participation_rate_observed", float(cohort.selected.mean()), math.nan, ns, n]]
    for i, nm in enumerate(names):
        summ.append([f"{nm}_participants", float(ys[:, i].mean()), float(ys[:, i].std(ddof=1)), ns, n])
        summ.append([f"{nm}_reference", float(ry[:, i].mean()), float(ry[:, i].std(ddof=1)), n_ref, n_ref])
    files.append(out / "cohort_summary.csv")
    dataio.write_records(files[-1], ["quantity", "mean", "sd", "n", "n_total"], summ)

    tr = simgen.truth(part, params, alpha)
    files.append(out / "truth.csv")
    dataio.write_records(files[-1], ["parameter", "value"], [[k, float(v)] for k, v in tr.items()])

    # a config the adjust subcommand can run as is
    adj = {
        "participation": {"alpha": float(alpha), "h2x": float(h2x), "sumstats": "sumstats/participation.sumstats",
                          "meanshift": "meanshift.csv"},
        "ldsc": {"blocks": blocks, "h2_intercept": 1.0, "gcov_intercept": 0.0},
    }
    if ld_block is not None:
        adj["ldsc"]["ld_scores"] = "ld_scores.txt"
    for nm in names:
        adj[f"phenotype {nm}"] = {"sumstats": f"sumstats/{nm}.sumstats"}
    if len(names) == 2:
        # both GWAS use the same participants: the cross-trait intercept is their phenotypic correlation
        r12 = float(np.corrcoef(ys.T)[0, 1])
        adj[f"pair {names[0]}|{names[1]}"] = {"intercept": r12}
    files.append(out / "adjust.ini")
    dataio.write_config(files[-1], adj)
    write_manifest(out, "simulate", args, [args.config], files, {"seed_used": seed})
    return EXIT_OK


# --------------------------------------------------------------- meanshift


def _filter_rows(cfg, table, sec):
    keep = np.ones(len(next(iter(table.values()))), dtype=bool)
    for key in cfg.parser.options(sec):
        if key.startswith("range_"):
            col = key[len("range_"):]
            lo, hi = cfg.get_floats(sec, key)
            if col not in table:
                raise InputError(f"filter column {col!r} not in table")
            v = np.asarray(table[col], float)
            keep &= (v >= lo) & (v <= hi)
    return {k: np.asarray(v)[keep] for k, v in table.items()}


def cmd_meanshift(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    alpha, _ = _participation(cfg, need_h2x=False)
    sec = "meanshift"
    if not cfg.has(sec):
        raise InputError(f"{cfg.path}: [meanshift] section is required")
    sp = Path(args.sample) if args.sample else _resolve(cfg, cfg.require(sec, "sample"))
    rp = Path(args.reference) if args.reference else _resolve(cfg, cfg.require(sec, "reference"))
    sample = _filter_rows(cfg, dataio.read_phenotype_table(sp), sec)
    ref = _filter_rows(cfg, dataio.read_phenotype_table(rp), sec)
    phenos = cfg.get_strings(sec, "phenotypes") or []
    covs = cfg.get_strings(sec, "covariates", [])
    strata = cfg.get(sec, "strata") or None
    binary = set(cfg.get_strings(sec, "binary", []))
    needed = set(phenos) | set(covs) | ({strata} if strata else set())
    miss_s = sorted(needed - set(sample))
    miss_r = sorted(needed - set(ref))
    if miss_s or miss_r:
        raise InputError(
            "column mismatch between cohorts; "
            f"missing from sample: {miss_s or 'none'}; missing from reference: {miss_r or 'none'}"
        )
    if not phenos:
        raise InputError("[meanshift] phenotypes is empty")
    recs = [
        dataio.mean_shift_from_tables(sample, ref, p, alpha, covs, strata, binary=p in binary)
        for p in phenos
    ]
    path = out / "meanshift.csv"
    dataio.write_mean_shifts(path, recs)
    write_manifest(out, "meanshift", args, [args.config, sp, rp], [path])
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partbias", description="Participation-bias adjustment toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        p.add_argument("--out-dir", required=True, help="output directory")
        p.add_argument("--blocks", type=int, default=None, help="jackknife block count")
        p.add_argument("--threads", type=int, default=None, help="worker threads for simulation")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("forward-curves", help="apparent h2 and genetic correlations versus alpha"))
    a = common(sub.add_parser("adjust", help="adjust estimates for participation bias"))
    a.add_argument("--meanshift", default=None, help="mean-shift CSV (overrides the config)")
    common(sub.add_parser("simulate", help="simulate a cohort and write summary statistics"))
    m = common(sub.add_parser("meanshift", help="mean shifts between participants and a reference"))
    m.add_argument("--sample", default=None, help="participant phenotype table (CSV)")
    m.add_argument("--reference", default=None, help="reference phenotype table (CSV)")
    return parser


COMMANDS = {
    "forward-curves": cmd_forward_curves,
    "adjust": cmd_adjust,
    "simulate": cmd_simulate,
    "meanshift": cmd_meanshift,
}


def _error(kind, exc, code) -> int:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(rec) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.blocks is not None and args.blocks < 2:
        return _error("input", InputError("--blocks must be at least 2"), EXIT_INPUT)
    if args.threads is not None and args.threads < 1:
        return _error("input", InputError("--threads must be at least 1"), EXIT_INPUT)
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except (DegenerateSelectionError, JackknifeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _error("numeric", exc, EXIT_NUMERIC)
    except (InputError, AlleleMismatchError, simgen.MemoryBudgetError, ValueError, OSError) as exc:
        return _error("input", exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
