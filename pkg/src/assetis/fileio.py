"""File formats: design configs, expression CSVs, result records and curves.

Design config grammar, one ``key = value`` pair per line::

    # comment
    n = [1000, 1000, 800]
    case_fraction = [0.5, 0.4, 0.3]   # optional
    sigma_file = sigma.csv            # optional, M x M numeric CSV

Relative ``sigma_file`` paths resolve against the config file's directory.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigurationError, DataError
from .mc import rng_stream
from .model import ExpressionMatrix, StudyDesign

DESIGN_KEYS = ("n", "case_fraction", "sigma_file")
SYNTH_TAGS = ("normal", "bimodal", "sharp-bimodal", "zero-inflated")
ZERO_FRACTION = 0.7


def _parse_value(raw: str, key: str, lineno: int):
    raw = raw.strip()
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise ConfigurationError(f"line {lineno}: unterminated list for '{key}'")
        body = raw[1:-1].strip()
        if not body:
            return []
        try:
            return [float(tok) for tok in body.split(",")]
        except ValueError:
            raise ConfigurationError(f"line {lineno}: non-numeric entry in '{key}'") from None
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    return raw


def parse_config(text: str, allowed=DESIGN_KEYS) -> dict:
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ConfigurationError(f"line {lineno}: unknown key '{key}'")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key '{key}'")
        out[key] = _parse_value(raw, key, lineno)
    return out


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"matrix file not found: {path}")
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return a


def read_design(path) -> StudyDesign:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"design file not found: {path}")
    cfg = parse_config(path.read_text())
    if "n" not in cfg:
        raise ConfigurationError(f"{path}: required key 'n' missing")
    sigma = None
    if "sigma_file" in cfg:
        sf = Path(cfg["sigma_file"])
        if not sf.is_absolute():
            sf = path.parent / sf
        sigma = read_matrix_csv(sf)
    return StudyDesign(cfg["n"], cfg.get("case_fraction"), sigma)


def write_design(path, design: StudyDesign, sigma_name: str = "sigma.csv") -> None:
    path = Path(path)
    fmt = lambda v: "[" + ", ".join(repr(float(x)) for x in v) + "]"  # noqa: E731
    lines = [f"n = {fmt(design.n)}"]
    if design.case_fraction is not None:
        lines.append(f"case_fraction = {fmt(design.case_fraction)}")
    if design.sigma is not None:
        np.savetxt(path.parent / sigma_name, design.sigma, delimiter=",", fmt="%.17g")
        lines.append(f"sigma_file = {sigma_name}")
    path.write_text("\n".join(lines) + "\n")


def read_expression(path) -> ExpressionMatrix:
    """Read a subjects x cell-types CSV (header row of labels) and standardize it."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"expression file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise DataError(f"{path}: need a header and at least two subjects")
    header = [h.strip() for h in rows[0]]
    values = []
    for i, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {i} has {len(row)} fields, expected {len(header)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise DataError(f"{path}: line {i} has a missing or non-numeric value") from None
        values.append(vals)
    return ExpressionMatrix.from_raw(np.array(values), header)


def write_expression(path, Y: ExpressionMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(Y.cell_labels)
        for row in Y.values:
            w.writerow([repr(float(v)) for v in row])


def generate_raw_expression(tag: str, N: int, C: int, seed: int) -> np.ndarray:
    """Unstandardized synthetic expression with one of four marginal shapes.

    bimodal: equal mixture of N(+-1.5, 0.5^2); sharp-bimodal: 0.85 N(0.5, 0.2^2)
    + 0.15 N(-2.5, 0.3^2); zero-inflated: 70% exact zeros per column, the
    rest N(1, 1). Columns are independent.
    """
    if tag not in SYNTH_TAGS:
        raise ConfigurationError(f"unknown distribution tag {tag!r}; choose from {SYNTH_TAGS}")
    if N < 2 or C < 1:
        raise ConfigurationError("synthetic expression needs N >= 2 and C >= 1")
    rng = rng_stream(seed, 0)
    if tag == "normal":
        return rng.standard_normal((N, C))
    if tag == "bimodal":
        sign = np.where(rng.random((N, C)) < 0.5, -1.0, 1.0)
        return sign * 1.5 + 0.5 * rng.standard_normal((N, C))
    if tag == "sharp-bimodal":
        minor = rng.random((N, C)) < 0.15
        return np.where(minor, -2.5 + 0.3 * rng.standard_normal((N, C)),
                        0.5 + 0.2 * rng.standard_normal((N, C)))
    x = np.zeros((N, C))
    n_nonzero = N - int(round(ZERO_FRACTION * N))
    for c in range(C):
        idx = rng.permutation(N)[:n_nonzero]
        x[idx, c] = rng.normal(1.0, 1.0, n_nonzero)
    return x


def generate_synthetic_expression(tag: str, N: int, C: int, seed: int) -> ExpressionMatrix:
    raw = generate_raw_expression(tag, N, C, seed)
    return ExpressionMatrix.from_raw(raw, [f"cell{j + 1}" for j in range(C)])


ROW_FIELDS = (
    "b", "p_is", "se_is", "K_is", "hits_is", "p_dlm", "p_mc", "se_mc", "K_mc", "hits_mc",
    "K_is_needed", "K_mc_needed", "efficiency", "upper_is", "upper_mc", "warnings",
)
_INT_FIELDS = {"K_is", "hits_is", "K_mc", "hits_mc"}


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.16e}"
    return str(v)


def _unfmt(name: str, s: str):
    if s == "NA":
        return None
    if name == "warnings":
        return s
    if name in _INT_FIELDS:
        return int(s)
    return float(s)


@dataclass
class ResultRecord:
    scenario: dict
    rows: list
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ResultRecord":
        d = json.loads(text)
        return cls(d["scenario"], d["rows"], d.get("metadata", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for row in self.rows:
            w.writerow([_fmt(row.get(k)) for k in ROW_FIELDS])
        return buf.getvalue()

    @staticmethod
    def rows_from_csv(text: str) -> list:
        reader = csv.DictReader(io.StringIO(text))
        return [{k: _unfmt(k, v) for k, v in r.items()} for r in reader]

    def write(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        if prefix.suffix in (".csv", ".json"):
            prefix = prefix.with_suffix("")
        csv_path = prefix.with_name(prefix.name + ".csv")
        json_path = prefix.with_name(prefix.name + ".json")
        csv_text, json_text = self.to_csv(), self.to_json()
        csv_path.write_text(csv_text)
        json_path.write_text(json_text)
        return csv_path, json_path


CURVE_FIELDS = ("series", "b", "neg_log10_p", "band_lo", "band_hi", "censored", "upper_bound")


def curve_rows(record: ResultRecord, efficiency: bool = False) -> list[dict]:
    """Long-format plot data: one (b, -log10 p) series per estimator.

    Rows with ``p = 0`` are kept with ``censored = 1`` and an empty log value
    so plots can show the rule-of-three bound instead.
    """
    if len(record.rows) < 2:
        raise ConfigurationError("a curve needs at least two thresholds")
    out = []
    for series, p_key, se_key, up_key in (
        ("IS", "p_is", "se_is", "upper_is"),
        ("DLM", "p_dlm", None, None),
        ("MC", "p_mc", "se_mc", "upper_mc"),
    ):
        if all(r.get(p_key) is None for r in record.rows):
            continue
        for r in record.rows:
            p = r.get(p_key)
            if p is None:
                continue
            se = r.get(se_key) if se_key else None
            row = dict(series=series, b=r["b"], neg_log10_p=None, band_lo=None, band_hi=None,
                       censored=0, upper_bound=None)
            if p <= 0:
                row["censored"] = 1
                row["upper_bound"] = r.get(up_key) if up_key else None
            else:
                row["neg_log10_p"] = -math.log10(p)
                if se is not None:
                    row["band_lo"] = -math.log10(p + se)
                    row["band_hi"] = -math.log10(p - se) if p > se else None
            out.append(row)
    if efficiency:
        for r in record.rows:
            e = r.get("efficiency")
            if e is not None and e > 0:
                out.append(dict(series="log10_efficiency", b=r["b"], neg_log10_p=math.log10(e),
                                band_lo=None, band_hi=None, censored=0, upper_bound=None))
    return out


def emit_curve(record: ResultRecord, path, efficiency: bool = False) -> Path:
    rows = curve_rows(record, efficiency)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CURVE_FIELDS])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path
