"""Verified-inequality records, power-law fits and their serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

import numpy as np


@dataclass
class BoundReport:
    """One checked inequality, identity or decay rate.

    ``rows`` holds the per-sample table (one dict per row) the verdict was
    computed from; ``metadata`` records provenance.
    """

    name: str
    verdict: bool
    measured_constant: float | None = None
    fitted_slope: float | None = None
    expected_slope: float | None = None
    tolerance: float | None = None
    status: str = ""
    rows: list[dict] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.verdict = bool(self.verdict)
        if not self.status:
            self.status = "pass" if self.verdict else "fail"

    def summary(self) -> str:
        parts = [f"{self.name}: {self.status.upper()}"]
        if self.measured_constant is not None:
            parts.append(f"constant={self.measured_constant:.6g}")
        if self.fitted_slope is not None:
            exp = "" if self.expected_slope is None else f" (expected {self.expected_slope:.4g}"
            if exp and self.tolerance is not None:
                exp += f" +/- {self.tolerance:.3g}"
            parts.append(f"slope={self.fitted_slope:.4f}{exp}{')' if exp else ''}")
        return "  ".join(parts)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        return cls(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if hasattr(obj, "value") and not isinstance(obj, (str, bytes)):
        return _jsonable(obj.value)
    return obj


def fit_loglog(x: Iterable[float], y: Iterable[float]) -> tuple[float, float]:
    """Least-squares slope and intercept of log y against log x."""
    x = np.asarray(list(x), dtype=float)
    y = np.asarray(list(y), dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a power-law fit")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit requires positive data")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def fit_log2(n: Iterable[float], y: Iterable[float]) -> tuple[float, float]:
    """Slope of log2 y against n."""
    n = np.asarray(list(n), dtype=float)
    y = np.asarray(list(y), dtype=float)
    slope, intercept = np.polyfit(n, np.log2(y), 1)
    return float(slope), float(intercept)


def slope_report(name: str, x, y, expected: float, tol: float, **metadata) -> BoundReport:
    slope, intercept = fit_loglog(x, y)
    rows = [{"x": float(a), "y": float(b)} for a, b in zip(x, y)]
    return BoundReport(
        name=name,
        verdict=abs(slope - expected) <= tol,
        measured_constant=math.exp(intercept),
        fitted_slope=slope,
        expected_slope=expected,
        tolerance=tol,
        rows=rows,
        metadata=metadata,
    )


def write_jsonl(reports: Iterable[BoundReport], path) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")


def read_jsonl(path) -> list[BoundReport]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(BoundReport.from_dict(json.loads(line)))
    return out


SUMMARY_COLUMNS = ["name", "status", "measured_constant", "fitted_slope", "expected_slope", "tolerance"]


def reports_to_csv(reports: Iterable[BoundReport], extra_columns: Iterable[str] = ()) -> str:
    cols = SUMMARY_COLUMNS + list(extra_columns)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        d = rep.to_dict()
        d.update({k: rep.metadata.get(k, "") for k in extra_columns})
        writer.writerow(d)
    return buf.getvalue()


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(_jsonable(r))
    return buf.getvalue()
