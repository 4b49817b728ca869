"""Preprocessing and file formats.

Preprocessing runs in a fixed order: rank-based inverse normal transform
(per stratum), then covariate residualisation, then standardisation.  For a
mean shift the first two steps are fitted on the pooled participant and
reference rows, so a genuine difference between the cohorts survives them;
standardisation uses the participant SD only.

Formats
-------
summary statistics
    whitespace- or tab-delimited text, header ``SNP A1 A2 N Z`` (any case,
    any column order, extra columns ignored with a warning).
LD scores
    whitespace-delimited, header ``SNP L2``.
mean shifts
    CSV ``phenotype,delta,alpha,n_sample,n_reference`` plus an optional
    trailing ``flag`` column.
results
    CSV ``phenotype,estimate_type,original,adjusted,se_original,se_adjusted,
    warning,p_original,p_adjusted`` and a JSON-lines mirror.
config
    INI text read with :mod:`configparser`.

Every float is written with ``repr`` so re-reading reproduces it bit for bit.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .analysis import AnalysisResult, EstimateRow
from .ldsc import LdScores, SumStats
from .truncnorm import std_normal_quantile

log = logging.getLogger(__name__)

BLOM_OFFSET = 3.0 / 8.0
MISSING_TOKENS = {"", "na", "nan", "none", "null", "."}

SUMSTATS_COLUMNS = ("SNP", "A1", "A2", "N", "Z")
LD_COLUMNS = ("SNP", "L2")
MEANSHIFT_COLUMNS = ("phenotype", "delta", "alpha", "n_sample", "n_reference")
RESULT_COLUMNS = (
    "phenotype",
    "estimate_type",
    "original",
    "adjusted",
    "se_original",
    "se_adjusted",
    "warning",
)
RESULT_EXTRA_COLUMNS = ("p_original", "p_adjusted")
BINARY_FLAG = "binary_prevalence_difference"


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


# ---------------------------------------------------------------- numbers


def fmt_float(x) -> str:
    """Shortest text that reads back to the identical double."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _parse_float(token: str, where: str) -> float:
    if token.strip().lower() in MISSING_TOKENS:
        return math.nan
    try:
        return float(token)
    except ValueError:
        raise FormatError(f"{where}: cannot parse {token!r} as a number") from None


# ---------------------------------------------------------- preprocessing


def _as_strata(strata, n):
    if strata is None:
        return np.zeros(n, dtype=np.int64)
    s = np.asarray(strata)
    if s.shape != (n,):
        raise ValueError("strata must have one label per value")
    return s


def rank_inverse_normal(values, strata=None) -> np.ndarray:
    """Blom rank-based inverse normal transform, separately within each stratum.

    Missing values (NaN) stay missing.  Ties receive their average rank.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("values must be one-dimensional")
    s = _as_strata(strata, len(v))
    out = np.full(len(v), np.nan)
    for label in np.unique(s):
        idx = np.flatnonzero((s == label) & ~np.isnan(v))
        if len(idx) < 2:
            raise ValueError(f"stratum {label!r}: need at least 2 non-missing values")
        x = v[idx]
        if np.all(x == x[0]):
            raise ValueError(f"stratum {label!r}: all values are equal")
        r = sps.rankdata(x, method="average")
        out[idx] = std_normal_quantile((r - BLOM_OFFSET) / (len(x) + 1.0 - 2.0 * BLOM_OFFSET))
    return out


def _design(covariates, names=None):
    c = np.asarray(covariates, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    names = list(names) if names is not None else [f"col{j}" for j in range(c.shape[1])]
    if len(names) != c.shape[1]:
        raise ValueError("covariate names do not match the covariate columns")
    return np.column_stack([np.ones(len(c)), c]), ["intercept"] + names


def _collinear_columns(X, names, tol):
    """Names of the columns that make ``X`` rank deficient."""
    keep = []
    bad = []
    for j in range(X.shape[1]):
        trial = keep + [j]
        if np.linalg.matrix_rank(X[:, trial], tol=tol * max(1.0, np.abs(X[:, trial]).max())) == len(trial):
            keep = trial
        else:
            bad.append(j)
    # report each dependent column together with the columns it depends on
    involved = set(bad)
    for j in bad:
        coef, *_ = np.linalg.lstsq(X[:, keep], X[:, j], rcond=None)
        involved.update(k for k, c in zip(keep, coef) if abs(c) > 1e-8)
    return [names[k] for k in sorted(involved)]


def residualize(values, covariates, names=None) -> np.ndarray:
    """Least-squares residuals of ``values`` on an intercept plus covariates.

    Rows with any missing entry get a NaN residual.
    """
    y = np.asarray(values, dtype=float)
    X, labels = _design(covariates, names)
    if len(X) != len(y):
        raise ValueError("values and covariates differ in length")
    ok = ~np.isnan(y) & ~np.isnan(X).any(axis=1)
    Xo = X[ok]
    tol = 1e-10
    if np.linalg.matrix_rank(Xo, tol=tol * max(1.0, np.abs(Xo).max())) < Xo.shape[1]:
        cols = _collinear_columns(Xo, labels, tol)
        raise ValueError(f"covariate design is rank deficient; collinear columns: {', '.join(cols)}")
    coef, *_ = np.linalg.lstsq(Xo, y[ok], rcond=None)
    out = np.full(len(y), np.nan)
    out[ok] = y[ok] - Xo @ coef
    return out


def standardize(values, center=None, scale=None) -> np.ndarray:
    """``(v - center) / scale``; both default to the sample mean and SD (ddof=1)."""
    v = np.asarray(values, dtype=float)
    ok = v[~np.isnan(v)]
    center = ok.mean() if center is None else center
    scale = ok.std(ddof=1) if scale is None else scale
    if not scale > 0:
        raise ValueError("zero standard deviation")
    return (v - center) / scale


def preprocess(values, covariates=None, strata=None, covariate_names=None, transform=True):
    """INT per stratum, then residualise, then standardise."""
    v = rank_inverse_normal(values, strata) if transform else np.asarray(values, dtype=float)
    if covariates is not None and np.asarray(covariates).size:
        v = residualize(v, covariates, covariate_names)
    return standardize(v)


@dataclass(frozen=True)
class MeanShiftRecord:
    phenotype: str
    delta: float
    alpha: float
    n_sample: int
    n_reference: int
    flag: str = ""

    def __post_init__(self):
        if not math.isfinite(self.delta):
            raise ValueError(f"{self.phenotype}: mean shift must be finite")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"{self.phenotype}: alpha must lie in (0, 1]")


def compute_mean_shift(sample, reference, alpha=math.nan, phenotype="", flag="") -> MeanShiftRecord:
    """Participant-minus-reference mean in participant-SD units.

    Both inputs must already have had identical preprocessing.
    """
    s = np.asarray(sample, dtype=float)
    r = np.asarray(reference, dtype=float)
    s, r = s[~np.isnan(s)], r[~np.isnan(r)]
    if len(s) < 2 or len(r) < 2:
        raise ValueError(f"{phenotype or 'phenotype'}: need at least 2 values per cohort")
    sd = s.std(ddof=1)
    if not sd > 0:
        raise ValueError(f"{phenotype or 'phenotype'}: zero standard deviation among participants")
    delta = (s.mean() - r.mean()) / sd
    alpha = 1.0 if math.isnan(alpha) else float(alpha)
    return MeanShiftRecord(phenotype, float(delta), alpha, len(s), len(r), flag)


def mean_shift_from_tables(
    sample: dict,
    reference: dict,
    phenotype: str,
    alpha: float,
    covariates=(),
    strata: str | None = None,
    binary: bool = False,
) -> MeanShiftRecord:
    """Apply the fixed preprocessing to pooled rows, then compute the mean shift.

    Binary phenotypes skip the transform and the covariate step; their
    shift is the prevalence difference in participant-SD units and is flagged.
    """
    ns = len(sample[phenotype])
    pooled = np.concatenate([np.asarray(sample[phenotype], float), np.asarray(reference[phenotype], float)])
    if binary:
        vals = pooled[~np.isnan(pooled)]
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValueError(f"{phenotype}: binary phenotype must be coded 0/1")
        return compute_mean_shift(pooled[:ns], pooled[ns:], alpha, phenotype, BINARY_FLAG)
    st = None
    if strata:
        st = np.concatenate([np.asarray(sample[strata]), np.asarray(reference[strata])])
    v = rank_inverse_normal(pooled, st)
    if covariates:
        cov = np.column_stack(
            [np.concatenate([np.asarray(sample[c], float), np.asarray(reference[c], float)]) for c in covariates]
        )
        v = residualize(v, cov, covariates)
    # standardising by the participant SD happens inside compute_mean_shift
    return compute_mean_shift(v[:ns], v[ns:], alpha, phenotype)


# ---------------------------------------------------------- tabular text


def _split(line: str, delim):
    return line.rstrip("\r\n").split(delim) if delim else line.split()


def _header_index(header, required, path):
    upper = [h.strip().upper() for h in header]
    idx = {}
    missing = [c for c in required if c.upper() not in upper]
    if missing:
        raise FormatError(f"{path}: missing required column(s): {', '.join(missing)}")
    for c in required:
        idx[c] = upper.index(c.upper())
    extra = [h for h, u in zip(header, upper) if u not in {c.upper() for c in required}]
    if extra:
        log.warning("%s: ignoring unknown column(s): %s", path, ", ".join(extra))
    return idx, extra


def _read_table(path, required, text=None):
    """Rows of a whitespace/tab table as dicts of strings, with line numbers."""
    path = str(path)
    src = io.StringIO(text) if text is not None else open(path, encoding="utf-8")
    with src:
        lines = src.readlines()
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise FormatError(f"{path}: empty file")
    hline, header_text = body[0]
    delim = "\t" if "\t" in header_text else None
    header = _split(header_text, delim)
    idx, extra = _header_index(header, required, path)
    rows = []
    for lineno, ln in body[1:]:
        parts = _split(ln, delim)
        if len(parts) != len(header):
            raise FormatError(f"{path}, line {lineno}: expected {len(header)} fields, found {len(parts)}")
        rows.append((lineno, {c: parts[j].strip() for c, j in idx.items()}))
    return rows, extra


def read_sumstats(path, trait: str | None = None, text=None) -> SumStats:
    rows, _ = _read_table(path, SUMSTATS_COLUMNS, text)
    snp, a1, a2, n, z = [], [], [], [], []
    for lineno, r in rows:
        where = f"{path}, line {lineno}"
        nv = _parse_float(r["N"], where)
        zv = _parse_float(r["Z"], where)
        if not (math.isfinite(nv) and math.isfinite(zv)):
            raise FormatError(f"{where}: N and Z must be finite")
        if not r["SNP"] or not r["A1"] or not r["A2"]:
            raise FormatError(f"{where}: empty SNP or allele field")
        snp.append(r["SNP"])
        a1.append(r["A1"])
        a2.append(r["A2"])
        n.append(nv)
        z.append(zv)
    if not snp:
        raise FormatError(f"{path}: no data rows")
    name = trait if trait is not None else Path(str(path)).stem
    try:
        return SumStats(name, np.array(snp), np.array(a1), np.array(a2), np.array(n), np.array(z))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_sumstats(path, stats: SumStats) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(SUMSTATS_COLUMNS) + "\n")
        for s, a, b, n, z in zip(stats.snp, stats.a1, stats.a2, stats.n, stats.z):
            fh.write(f"{s}\t{a}\t{b}\t{fmt_float(n)}\t{fmt_float(z)}\n")


def read_ld_scores(path, text=None) -> LdScores:
    rows, _ = _read_table(path, LD_COLUMNS, text)
    snp, ld = [], []
    for lineno, r in rows:
        v = _parse_float(r["L2"], f"{path}, line {lineno}")
        if not math.isfinite(v):
            raise FormatError(f"{path}, line {lineno}: L2 must be finite")
        snp.append(r["SNP"])
        ld.append(v)
    try:
        return LdScores(np.array(snp), np.array(ld))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_ld_scores(path, ld: LdScores) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(LD_COLUMNS) + "\n")
        for s, v in zip(ld.snp, ld.ld):
            fh.write(f"{s}\t{fmt_float(v)}\n")


# ------------------------------------------------------------ CSV tables


def _csv_rows(path, required):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        lower = [h.lower() for h in header]
        missing = [c for c in required if c.lower() not in lower]
        if missing:
            raise FormatError(f"{path}: missing required column(s): {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}, line {lineno}: expected {len(header)} fields, found {len(row)}")
            yield lineno, dict(zip(lower, (c.strip() for c in row)))


def read_phenotype_table(path) -> dict:
    """CSV with a header; returns column name -> float array (NaN for missing).

    Non-numeric columns (e.g. a cohort or stratum label) are kept as strings.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}, line {lineno}: expected {len(header)} fields, found {len(row)}")
            for h, c in zip(header, row):
                cols[h].append(c.strip())
    out = {}
    for h, vals in cols.items():
        try:
            out[h] = np.array([math.nan if v.lower() in MISSING_TOKENS else float(v) for v in vals])
        except ValueError:
            out[h] = np.array(vals, dtype=str)
    return out


def write_phenotype_table(path, table: dict) -> None:
    names = list(table)
    n = len(next(iter(table.values()))) if names else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow(
                [fmt_float(table[c][i]) if np.issubdtype(np.asarray(table[c]).dtype, np.number) else table[c][i]
                 for c in names]
            )


def read_mean_shifts(path) -> dict:
    out = {}
    for lineno, r in _csv_rows(path, MEANSHIFT_COLUMNS):
        where = f"{path}, line {lineno}"
        try:
            rec = MeanShiftRecord(
                phenotype=r["phenotype"],
                delta=_parse_float(r["delta"], where),
                alpha=_parse_float(r["alpha"], where),
                n_sample=int(r["n_sample"]),
                n_reference=int(r["n_reference"]),
                flag=r.get("flag", ""),
            )
        except ValueError as exc:
            raise FormatError(f"{where}: {exc}") from None
        if rec.phenotype in out:
            raise FormatError(f"{where}: duplicate phenotype {rec.phenotype!r}")
        out[rec.phenotype] = rec
    return out


def write_mean_shifts(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEANSHIFT_COLUMNS + ("flag",))
        for r in records:
            w.writerow([r.phenotype, fmt_float(r.delta), fmt_float(r.alpha), r.n_sample, r.n_reference, r.flag])


def _row_values(r: EstimateRow):
    return [
        r.phenotype,
        r.estimate_type,
        fmt_float(r.original),
        fmt_float(r.adjusted),
        fmt_float(r.se_original),
        fmt_float(r.se_adjusted),
        r.warning,
        fmt_float(r.p_original),
        fmt_float(r.p_adjusted),
    ]


def write_results(csv_path, rows, jsonl_path=None) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS + RESULT_EXTRA_COLUMNS)
        for r in rows:
            w.writerow(_row_values(r))
    if jsonl_path is not None:
        keys = RESULT_COLUMNS + RESULT_EXTRA_COLUMNS
        with open(jsonl_path, "w", encoding="utf-8", newline="\n") as fh:
            for r in rows:
                rec = {}
                for k, v in zip(keys, _row_values(r)):
                    # JSON has no NaN; missing numbers become null
                    rec[k] = None if v == "nan" else (float(v) if k not in ("phenotype", "estimate_type", "warning") else v)
                fh.write(json.dumps(rec, sort_keys=False) + "\n")


def read_results(path) -> list:
    rows = []
    for lineno, r in _csv_rows(path, RESULT_COLUMNS):
        where = f"{path}, line {lineno}"
        rows.append(
            EstimateRow(
                phenotype=r["phenotype"],
                estimate_type=r["estimate_type"],
                original=_parse_float(r["original"], where),
                adjusted=_parse_float(r["adjusted"], where),
                se_original=_parse_float(r["se_original"], where),
                se_adjusted=_parse_float(r["se_adjusted"], where),
                warning=r["warning"],
            )
        )
    return rows


def write_analysis(out_dir, result: AnalysisResult, stem="results") -> list:
    out_dir = Path(out_dir)
    csv_path, jsonl_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.jsonl"
    write_results(csv_path, result.rows, jsonl_path)
    return [csv_path, jsonl_path]


def write_records(path, header, records) -> None:
    """Generic CSV writer; floats are written at full precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in records:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in rec])


# ----------------------------------------------------------------- config


_LIST_SPLIT = re.compile(r"[,\s]+")


class Config:
    """Flat ``key = value`` settings in INI sections.

    Recognised sections: ``[participation]`` (``alpha``, ``h2x``,
    ``h2x_se``), one ``[phenotype NAME]`` section per phenotype, ``[pair A|B]``
    sections, and ``[simulation]``, ``[ldsc]``, ``[curves]``, ``[meanshift]``.
    """

    def __init__(self, parser: configparser.ConfigParser, path="<config>"):
        self.parser = parser
        self.path = str(path)

    @classmethod
    def read(cls, path) -> "Config":
        p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        p.optionxform = str.lower
        try:
            with open(path, encoding="utf-8") as fh:
                p.read_file(fh)
        except configparser.Error as exc:
            raise FormatError(f"{path}: {exc}") from None
        return cls(p, path)

    @classmethod
    def from_string(cls, text, path="<string>") -> "Config":
        p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        p.optionxform = str.lower
        try:
            p.read_string(text)
        except configparser.Error as exc:
            raise FormatError(f"{path}: {exc}") from None
        return cls(p, path)

    def has(self, section, key=None) -> bool:
        if not self.parser.has_section(section):
            return False
        return key is None or self.parser.has_option(section, key)

    def get(self, section, key, default=None):
        if self.has(section, key):
            return self.parser.get(section, key).strip()
        return default

    def require(self, section, key) -> str:
        v = self.get(section, key)
        if v is None or v == "":
            raise FormatError(f"{self.path}: [{section}] {key} is required")
        return v

    def get_float(self, section, key, default=None):
        v = self.get(section, key)
        if v is None or v == "":
            return default
        return _parse_float(v, f"{self.path}: [{section}] {key}")

    def require_float(self, section, key) -> float:
        v = self.get_float(section, key)
        if v is None or math.isnan(v):
            raise FormatError(f"{self.path}: [{section}] {key} is required")
        return v

    def get_int(self, section, key, default=None):
        v = self.get(section, key)
        if v is None or v == "":
            return default
        try:
            return int(v)
        except ValueError:
            raise FormatError(f"{self.path}: [{section}] {key}: not an integer: {v!r}") from None

    def get_floats(self, section, key, default=None):
        v = self.get(section, key)
        if v is None or v == "":
            return default
        return [_parse_float(t, f"{self.path}: [{section}] {key}") for t in _LIST_SPLIT.split(v) if t]

    def get_strings(self, section, key, default=None):
        v = self.get(section, key)
        if v is None or v == "":
            return default
        return [t for t in _LIST_SPLIT.split(v) if t]

    def get_bool(self, section, key, default=False):
        if not self.has(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError as exc:
            raise FormatError(f"{self.path}: [{section}] {key}: {exc}") from None

    def phenotype_sections(self) -> dict:
        """Phenotype name -> section name, in file order."""
        out = {}
        for s in self.parser.sections():
            kind, _, name = s.partition(" ")
            if kind.lower() == "phenotype" and name.strip():
                out[name.strip()] = s
        return out

    def pair_sections(self) -> dict:
        out = {}
        for s in self.parser.sections():
            kind, _, name = s.partition(" ")
            if kind.lower() == "pair" and "|" in name:
                a, b = (t.strip() for t in name.split("|", 1))
                out[(a, b)] = s
        return out


def write_config(path, sections: dict) -> None:
    """Write ``{section: {key: value}}`` as INI; floats at full precision."""
    lines = []
    for sec, kv in sections.items():
        lines.append(f"[{sec}]")
        for k, v in kv.items():
            if isinstance(v, (float, np.floating)):
                v = fmt_float(v)
            elif isinstance(v, (list, tuple)):
                v = ", ".join(fmt_float(x) if isinstance(x, float) else str(x) for x in v)
            lines.append(f"{k} = {v}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
