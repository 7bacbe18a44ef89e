"""Batch experiment runner: config ingestion, spectral caching, report emission.

A run reads one JSON config, diagonalizes H once, executes the requested
experiments against the shared spectral data and writes ``reports.jsonl``,
``reports.csv``, one ``rows_<name>.csv`` per report and ``manifest.json``
into the output directory.  The process exits nonzero iff a report fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .grid import (INF, Grid, GridError, GridMode, GridSpec, PotentialSpec, build_grid, kato_norm,
                   read_potential_file, sample_potential)
from .reports import BoundReport, _jsonable, read_jsonl, reports_to_csv, rows_to_csv, write_jsonl
from .spectral import (SpectralData, assemble_hamiltonian, diagonalize, functional_calculus_report)

log = logging.getLogger("katolab")

SCHEMA_VERSION = 1
CACHE_ENV = "KATOLAB_CACHE_DIR"


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


# --- configuration ---------------------------------------------------------------


def parse_grid(text: str) -> GridSpec:
    """``radial:R,N`` or ``box:R,N``."""
    mode, _, args = text.partition(":")
    try:
        extent, n = args.split(",")
        return GridSpec(GridMode(mode.strip().lower()), float(extent), int(n))
    except (ValueError, GridError) as exc:
        raise ConfigError(f"grid: cannot parse {text!r} ({exc})") from exc


@dataclass
class ExperimentConfig:
    grid: GridSpec
    potential: PotentialSpec = field(default_factory=PotentialSpec.zero)
    epsilon0: float | None = None
    tolerances: dict = field(default_factory=dict)
    experiments: list = field(default_factory=list)
    output_dir: str = "katolab-out"
    cache: str = "use"
    seed: int = 0
    fail_on_rejected: bool = True
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}")
        if self.cache not in ("use", "refresh", "off"):
            raise ConfigError(f"cache: must be use, refresh or off, got {self.cache!r}")
        if self.epsilon0 is not None and not self.epsilon0 > 0:
            raise ConfigError("epsilon0: must be positive")
        for k, v in self.tolerances.items():
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"tolerances.{k}: must be a positive number, got {v!r}")
        for i, exp in enumerate(self.experiments):
            if not isinstance(exp, dict) or "name" not in exp:
                raise ConfigError(f"experiments[{i}]: expected an object with a 'name'")
            if exp["name"] not in EXPERIMENTS:
                raise ConfigError(f"experiments[{i}].name: unknown experiment {exp['name']!r}")
            if not isinstance(exp.get("params", {}), dict):
                raise ConfigError(f"experiments[{i}].params: expected an object")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "grid": self.grid.to_dict(),
            "potential": self.potential.to_dict(),
            "epsilon0": self.epsilon0,
            "tolerances": dict(sorted(self.tolerances.items())),
            "experiments": [{"name": e["name"], "params": e.get("params", {})} for e in self.experiments],
            "output_dir": self.output_dir,
            "cache": self.cache,
            "seed": self.seed,
            "fail_on_rejected": self.fail_on_rejected,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"schema_version", "grid", "potential", "epsilon0", "tolerances", "experiments",
                 "output_dir", "cache", "seed", "fail_on_rejected"}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"{extra[0]}: unknown field")
        if "grid" not in d:
            raise ConfigError("grid: required")
        g = d["grid"]
        try:
            grid = parse_grid(g) if isinstance(g, str) else GridSpec(GridMode(g["mode"]), float(g["extent"]),
                                                                   int(g["points_per_axis"]))
        except (KeyError, ValueError, GridError, TypeError) as exc:
            raise ConfigError(f"grid: {exc}") from exc
        p = d.get("potential", "zero")
        try:
            pot = PotentialSpec.parse(p) if isinstance(p, str) else PotentialSpec.from_dict(p)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"potential: {exc}") from exc
        return cls(grid=grid, potential=pot, epsilon0=d.get("epsilon0"), tolerances=dict(d.get("tolerances", {})),
                   experiments=list(d.get("experiments", [])), output_dir=d.get("output_dir", "katolab-out"),
                   cache=d.get("cache", "use"), seed=int(d.get("seed", 0)),
                   fail_on_rejected=bool(d.get("fail_on_rejected", True)),
                   schema_version=int(d.get("schema_version", SCHEMA_VERSION)))

    def content_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("cache")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return ExperimentConfig.from_dict(data)


# --- spectral cache --------------------------------------------------------------


def _potential_values(grid: Grid, pot: PotentialSpec) -> np.ndarray:
    if pot.kind.value == "file":
        return read_potential_file(grid, pot.path)
    return sample_potential(grid, pot)


def spectral_cache_key(grid: Grid, V: np.ndarray, epsilon0: float | None) -> str:
    h = hashlib.sha256()
    h.update(grid.fingerprint().encode())
    h.update(np.ascontiguousarray(V, dtype=float).tobytes())
    h.update(repr(epsilon0).encode())
    return h.hexdigest()[:24]


def cached_spectral_data(grid: Grid, V: np.ndarray, epsilon0: float | None, policy: str = "use",
                         cache_dir: str | os.PathLike | None = None) -> tuple[SpectralData, str]:
    """Diagonalize or reuse a cached decomposition; returns (S, 'hit' | 'miss' | 'off')."""
    cache_dir = cache_dir if cache_dir is not None else os.environ.get(CACHE_ENV)
    if policy == "off" or not cache_dir:
        return diagonalize(assemble_hamiltonian(grid, V), epsilon0), "off"
    key = spectral_cache_key(grid, V, epsilon0)
    path = Path(cache_dir) / f"spectral-{key}.npz"
    if policy == "use" and path.exists():
        try:
            with np.load(path) as z:
                if str(z["key"]) == key and z["eigenvectors"].shape == (grid.size, grid.size):
                    S = SpectralData(grid, z["eigenvalues"], z["eigenvectors"], float(z["zero_threshold"]),
                                     np.array(V, dtype=float))
                    return S, "hit"
            log.warning("cache entry %s does not match its key; recomputing", path)
        except (OSError, KeyError, ValueError) as exc:
            log.warning("unreadable cache entry %s (%s); recomputing", path, exc)
    S = diagonalize(assemble_hamiltonian(grid, V), epsilon0)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, key=key, eigenvalues=S.eigenvalues, eigenvectors=S.eigenvectors,
             zero_threshold=S.zero_threshold)
    os.replace(tmp, path)
    return S, "miss"


# --- experiments -----------------------------------------------------------------


class ExperimentRejected(Exception):
    """Requested experiment is outside the validity region; recorded, not run."""


@dataclass
class RunContext:
    config: ExperimentConfig
    grid: Grid
    V: np.ndarray
    S: SpectralData
    _weight: np.ndarray | None = None

    def tol(self, key: str, default: float) -> float:
        return float(self.config.tolerances.get(key, default))

    @property
    def weight(self) -> np.ndarray:
        if self._weight is None:
            from .maxprinciple import compute_weight

            self._weight = compute_weight(self.S).w
        return self._weight


def _exp_spectrum(ctx: RunContext, params: dict) -> list[BoundReport]:
    S = ctx.S
    k = int(params.get("rows", 10))
    gap = S.assumption
    rows = [{"k": i, "eigenvalue": float(lam)} for i, lam in enumerate(np.sort(S.eigenvalues)[:k])]
    return [BoundReport("spectrum", gap.verdict, measured_constant=float(S.eigenvalues.min()), rows=rows,
                        metadata={"negative_count": S.bound_state_count, "zero_threshold": S.zero_threshold,
                                  "eigenvalues_in_gap": list(gap.eigenvalues_in_gap),
                                  "kato_norm": kato_norm(ctx.grid, ctx.V)})]


def _exp_free_identities(ctx: RunContext, params: dict) -> list[BoundReport]:
    return [functional_calculus_report(ctx.S, ctx.tol("functional_calculus", 1e-10))]


def _exp_weight(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .maxprinciple import ground_state_report, weight_report

    return [weight_report(ctx.S), ground_state_report(ctx.S)]


def _exp_hormander(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .multipliers import hormander_report, parse_symbol

    return [hormander_report(parse_symbol(params.get("symbol", "powi:1")), float(params.get("s", 1.6)))]


def _exp_time_integral(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .multipliers import parse_symbol
    from .propagators import time_integral_discrepancy

    return [time_integral_discrepancy(ctx.S, parse_symbol(params.get("symbol", "bump:2")))]


def _exp_square_function(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .multipliers import sqf_drift_report
    from .probes import square_function_family

    n = int(params.get("probes", 4))
    return [sqf_drift_report(ctx.S, square_function_family(ctx.grid, n), square_function_family(ctx.grid, 2 * n),
                             drift_tolerance=ctx.tol("square_function_drift", 0.1))]


def _exp_paley_wiener(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .multipliers import pw_norm_scaling_report

    pairs = params.get("pairs", [[1, "inf"], [1, 1], ["inf", "inf"]])
    out = []
    for p, q in pairs:
        p, q = float(p), float(q)
        out.append(pw_norm_scaling_report(ctx.S, p, q, tolerance=ctx.tol("paley_wiener", 0.3)))
    return out


def _times(params: dict, default=(0.5, 5.0, 6)) -> np.ndarray:
    if "times" in params:
        return np.asarray(params["times"], dtype=float)
    lo, hi, n = params.get("time_range", default)
    return np.geomspace(float(lo), float(hi), int(n))


def _exp_dispersive(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .propagators import dispersive_report

    return [dispersive_report(ctx.S, _times(params), tolerance=ctx.tol("dispersive", 0.15))]


def _exp_lp_decay(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .probes import gaussian_probes, geometric_scales
    from .propagators import lp_decay_report

    probes = gaussian_probes(ctx.grid, geometric_scales(0.1, 4.0, 12))
    p_list = [float(p) for p in params.get("p", [1.0, 4.0 / 3.0, 2.0])]
    return lp_decay_report(ctx.S, p_list, _times(params), probes, tolerance=ctx.tol("lp_decay", 0.2))


def _exp_gradient_bounds(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .propagators import fund_integrals, modified_cosine_gradient_bounds

    seps = tuple(params.get("separations", (1.0, 2.0, 4.0)))
    return [modified_cosine_gradient_bounds(ctx.S, seps, tolerance=ctx.tol("gradient_bounds", 0.1)),
            fund_integrals(ctx.S)]


def _parse_exponent(v) -> float:
    return INF if str(v).lower() in ("inf", "infinity") else float(v)


def _exp_strichartz(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .probes import wave_data_pairs
    from .propagators import strichartz_report

    triples = [tuple(_parse_exponent(v) for v in t)
               for t in params.get("triples", [[1, "inf", 6], [0.5, 4, 4], [0, "inf", 2]])]
    rep = strichartz_report(ctx.S, triples, wave_data_pairs(ctx.grid),
                            drift_tolerance=ctx.tol("strichartz", 0.1))
    if rep.metadata["rejected"] and not rep.rows:
        raise ExperimentRejected("; ".join(r["reason"] for r in rep.metadata["rejected"]))
    return [rep]


def _exp_peral(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .probes import smooth_family
    from .propagators import peral_region_ok, peral_report

    s, p = float(params.get("s", 0.0)), _parse_exponent(params.get("p", 1.0))
    if not peral_region_ok(s, p):
        raise ExperimentRejected(f"(s, p) = ({s}, {p}) violates |s| <= 1 - 2|1/p - 1/2|")
    free = not np.any(ctx.V)
    probes = None if p == 2 else smooth_family(ctx.grid)
    return [peral_report(ctx.S, p, s, _times(params), probes, twisted=(s != 0 and not free),
                         tolerance=ctx.tol("peral", 0.2))]


def _exp_cz(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .czd import bad_stack, cz_decompose, plain_mean_ratio, tilde_transform

    grid = ctx.grid
    rng = np.random.default_rng(ctx.config.seed)
    w = ctx.weight
    count = int(params.get("fields", 50))
    levels = [float(a) for a in params.get("thresholds", [0.5, 1.0, 2.0])]
    worst = {"reconstruction_error": 0.0, "max_weighted_mean": 0.0, "C_g": 0.0, "C_sigma": 0.0, "tilde": 0.0}
    support = disjoint = True
    mu_t = w * grid.weights
    for _ in range(count):
        f = rng.standard_normal(grid.size) * np.exp(-grid.radius**2 / rng.uniform(0.5, 4.0))
        for a in levels:
            alpha = a * float(np.sum(np.abs(f) * mu_t) / np.sum(mu_t))
            D = cz_decompose(grid, f, alpha, w)
            v = D.verify(grid)
            support &= v["support_ok"]
            disjoint &= v["disjoint"]
            for k in ("reconstruction_error", "max_weighted_mean", "C_g", "C_sigma"):
                worst[k] = max(worst[k], v[k])
            B = bad_stack(D)
            if B.shape[1]:
                worst["tilde"] = max(worst["tilde"], float(np.max(plain_mean_ratio(grid, tilde_transform(ctx.S, B, w)))))
    doubling = 8.0 * float(w.max() / w.min())
    ok = (support and disjoint and worst["reconstruction_error"] <= 1e-12 and worst["max_weighted_mean"] <= 1e-12
          and worst["C_g"] <= doubling and worst["C_sigma"] <= 1.0 + 1e-12
          and worst["tilde"] <= ctx.tol("tilde_cancellation", 1e-8))
    return [BoundReport("cz_decomposition", ok, measured_constant=worst["C_g"],
                        rows=[{"property": k, "worst": v} for k, v in worst.items()],
                        metadata={"fields": count, "thresholds": levels, "support_ok": support,
                                  "disjoint": disjoint, "C_g_bound": doubling, "w_min": float(w.min()),
                                  "w_max": float(w.max()), "seed": ctx.config.seed})]


def _exp_weak11(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .czd import sigma_family_fit, weak11_report
    from .multipliers import parse_symbol

    s = float(params.get("s", 1.6))
    out = [weak11_report(ctx.S, parse_symbol(params.get("symbol", "powi:1")), s=s, seed=ctx.config.seed,
                         drift_tolerance=ctx.tol("weak11", 0.1))]
    if params.get("sigma_family", False):
        out.append(sigma_family_fit(ctx.S, s=s, seed=ctx.config.seed))
    return out


def _exp_cancellation(ctx: RunContext, params: dict) -> list[BoundReport]:
    from .czd import cancellation_report
    from .multipliers import parse_symbol

    seps = params.get("separations")
    seps = np.geomspace(0.1, 1.0, 5) if seps is None else np.asarray(seps, dtype=float)
    return [cancellation_report(ctx.S, parse_symbol(params.get("symbol", "powi:1")), seps,
                                spread_limit=ctx.tol("cancellation_spread", 2.0))]


EXPERIMENTS: dict[str, Callable[[RunContext, dict], list[BoundReport]]] = {
    "spectrum": _exp_spectrum,
    "free_identities": _exp_free_identities,
    "weight": _exp_weight,
    "hormander": _exp_hormander,
    "time_integral": _exp_time_integral,
    "square_function": _exp_square_function,
    "paley_wiener": _exp_paley_wiener,
    "dispersive": _exp_dispersive,
    "lp_decay": _exp_lp_decay,
    "gradient_bounds": _exp_gradient_bounds,
    "strichartz": _exp_strichartz,
    "peral": _exp_peral,
    "cz": _exp_cz,
    "weak11": _exp_weak11,
    "cancellation": _exp_cancellation,
}


# --- running ---------------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    config: dict
    entries: list = field(default_factory=list)
    stage_seconds: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    cache: str = "off"
    version: str = __version__

    @property
    def failed(self) -> bool:
        bad = {"fail", "error"}
        if self.config.get("fail_on_rejected", True):
            bad.add("rejected")
        return any(e["status"] in bad for e in self.entries)

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def to_dict(self) -> dict:
        return {"version": self.version, "config_hash": self.config_hash, "config": self.config,
                "cache": self.cache, "entries": self.entries, "stage_seconds": self.stage_seconds,
                "artifacts": self.artifacts, "exit_code": self.exit_code}


def _tag(rep: BoundReport, config: ExperimentConfig) -> BoundReport:
    rep.metadata.setdefault("potential", config.potential.to_dict())
    rep.metadata.setdefault("grid", config.grid.to_dict())
    return rep


def run(config: ExperimentConfig, write: bool = True) -> tuple[RunManifest, list[BoundReport]]:
    """Execute the experiments of ``config`` against one shared diagonalization."""
    manifest = RunManifest(config.content_hash(), config.to_dict())
    reports: list[BoundReport] = []
    if not config.experiments:
        if write:
            _write_outputs(config, manifest, reports)
        return manifest, reports
    t0 = time.perf_counter()
    grid = build_grid(config.grid)
    V = _potential_values(grid, config.potential)
    S, manifest.cache = cached_spectral_data(grid, V, config.epsilon0, config.cache)
    manifest.stage_seconds["diagonalize"] = time.perf_counter() - t0
    ctx = RunContext(config, grid, V, S)
    for i, exp in enumerate(config.experiments):
        name, params = exp["name"], exp.get("params", {})
        t1 = time.perf_counter()
        entry = {"index": i, "name": name, "params": params}
        try:
            got = [_tag(r, config) for r in EXPERIMENTS[name](ctx, params)]
        except ExperimentRejected as exc:
            entry.update(status="rejected", reason=str(exc), reports=[])
            log.warning("experiment %s rejected: %s", name, exc)
        except Exception as exc:  # recorded per experiment; the run continues
            entry.update(status="error", reason=f"{type(exc).__name__}: {exc}", reports=[])
            log.error("experiment %s failed: %s", name, exc)
        else:
            reports.extend(got)
            entry.update(status="pass" if all(r.verdict for r in got) else "fail",
                         reports=[r.name for r in got])
        manifest.stage_seconds[f"{i}:{name}"] = time.perf_counter() - t1
        manifest.entries.append(entry)
    if write:
        _write_outputs(config, manifest, reports)
    return manifest, reports


def _write_outputs(config: ExperimentConfig, manifest: RunManifest, reports: list[BoundReport]) -> None:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(reports, out / "reports.jsonl")
    (out / "reports.csv").write_text(reports_to_csv(reports))
    files = ["reports.jsonl", "reports.csv"]
    for k, rep in enumerate(reports):
        if rep.rows:
            name = f"rows_{k:02d}_{rep.name}.csv"
            (out / name).write_text(rows_to_csv([{k_: _cell(v) for k_, v in r.items()} for r in rep.rows]))
            files.append(name)
    files.append("manifest.json")
    manifest.artifacts = files
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest.to_dict()), indent=2, sort_keys=True) + "\n")


def _cell(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


# --- report merging ----------------------------------------------------------------


def _potential_label(meta: dict) -> str:
    pot = meta.get("potential") or {"kind": "zero"}
    if pot.get("kind") in (None, "zero"):
        return "zero"
    if pot.get("kind") == "sum":
        return "+".join(_potential_label({"potential": p}) for p in pot.get("parts", []))
    if pot.get("kind") == "file":
        return f"file:{pot.get('path')}"
    return f"{pot['kind']}:{pot.get('amplitude', 0):g},{pot.get('width', 1):g}"


def merge_reports(paths) -> str:
    """Comparative CSV: one row per report name, one status/constant column pair per potential."""
    table: dict[str, dict[str, str]] = {}
    labels: list[str] = []
    for p in paths:
        for rep in read_jsonl(p):
            lab = _potential_label(rep.metadata)
            if lab not in labels:
                labels.append(lab)
            val = rep.measured_constant if rep.fitted_slope is None else rep.fitted_slope
            table.setdefault(rep.name, {})[lab] = f"{rep.status}:{'' if val is None else f'{val:.6g}'}"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["report"] + labels)
    for name in sorted(table):
        writer.writerow([name] + [table[name].get(lab, "") for lab in labels])
    return buf.getvalue()


# --- command line ----------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", default="radial:10,1000", help="radial:R,N or box:R,N")
    p.add_argument("--potential", default="zero", help="zero, gaussian:A,sigma, yukawa:A,m, bump:A,rho, file:path")
    p.add_argument("--epsilon0", type=float, default=None, help="zero-band half width")
    p.add_argument("--out", default="katolab-out", help="output directory")
    p.add_argument("--cache", choices=["use", "refresh", "off"], default="use")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="katolab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"katolab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a JSON experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="override output_dir")

    p = sub.add_parser("spectrum", help="eigenvalue table and bound-state count")
    _common(p)
    p.add_argument("--rows", type=int, default=10)

    p = sub.add_parser("weight", help="weight w and ground-state checks")
    _common(p)

    p = sub.add_parser("multiplier", help="symbol checks")
    _common(p)
    p.add_argument("--symbol", default="powi:1")
    p.add_argument("--check", choices=["hormander", "oracle", "square", "paley-wiener", "identities"],
                   default="hormander")
    p.add_argument("--s", type=float, default=1.6)

    p = sub.add_parser("propagators", help="decay, gradient and Peral studies")
    _common(p)
    p.add_argument("--study", choices=["dispersive", "lp-decay", "gradient", "peral"], default="dispersive")
    p.add_argument("--times", type=float, nargs="+", default=None)
    p.add_argument("--peral", type=float, nargs=2, metavar=("S", "P"), default=(0.0, 1.0))

    p = sub.add_parser("strichartz", help="mixed-norm ratios for (s, p, q) triples")
    _common(p)
    p.add_argument("--triple", action="append", default=None, metavar="S,P,Q",
                   help="repeatable; p and q accept 'inf'")
    p.add_argument("--allow-rejected", action="store_true", help="do not fail the run on rejected triples")

    p = sub.add_parser("czd", help="CZ decomposition, weak-(1,1) and cancellation studies")
    _common(p)
    p.add_argument("--study", choices=["cz", "weak11", "cancellation"], default="cz")
    p.add_argument("--fields", type=int, default=50)
    p.add_argument("--symbol", default="powi:1")
    p.add_argument("--sigma-family", action="store_true")

    p = sub.add_parser("report", help="merge reports.jsonl files into one comparative table")
    p.add_argument("paths", nargs="+")
    p.add_argument("--output", default=None, help="CSV path (default stdout)")
    return parser


def _config_from_args(args, experiments: list[dict], **extra) -> ExperimentConfig:
    try:
        pot = PotentialSpec.parse(args.potential)
    except ValueError as exc:
        raise ConfigError(f"potential: {exc}") from exc
    return ExperimentConfig(grid=parse_grid(args.grid), potential=pot, epsilon0=args.epsilon0,
                            experiments=experiments, output_dir=args.out, cache=args.cache, seed=args.seed, **extra)


def _experiments_for(args) -> tuple[list[dict], dict]:
    cmd = args.command
    times = {} if getattr(args, "times", None) is None else {"times": args.times}
    if cmd == "spectrum":
        return [{"name": "spectrum", "params": {"rows": args.rows}}], {}
    if cmd == "weight":
        return [{"name": "weight", "params": {}}], {}
    if cmd == "multiplier":
        name = {"hormander": "hormander", "oracle": "time_integral", "square": "square_function",
                "paley-wiener": "paley_wiener", "identities": "free_identities"}[args.check]
        return [{"name": name, "params": {"symbol": args.symbol, "s": args.s}}], {}
    if cmd == "propagators":
        if args.study == "peral":
            return [{"name": "peral", "params": {"s": args.peral[0], "p": args.peral[1], **times}}], {}
        name = {"dispersive": "dispersive", "lp-decay": "lp_decay", "gradient": "gradient_bounds"}[args.study]
        return [{"name": name, "params": times}], {}
    if cmd == "strichartz":
        params = {}
        if args.triple:
            params["triples"] = [t.split(",") for t in args.triple]
        return [{"name": "strichartz", "params": params}], {"fail_on_rejected": not args.allow_rejected}
    if cmd == "czd":
        params = {"fields": args.fields} if args.study == "cz" else {"symbol": args.symbol}
        if args.study == "weak11":
            params["sigma_family"] = args.sigma_family
        return [{"name": args.study, "params": params}], {}
    raise ConfigError(f"command: unknown {cmd!r}")


def _print_summary(manifest: RunManifest, reports: list[BoundReport]) -> None:
    for rep in reports:
        print(rep.summary())
        if rep.name == "spectrum":
            print(f"  negative eigenvalues: {rep.metadata['negative_count']}")
            for row in rep.rows:
                print(f"  {row['k']:4d}  {row['eigenvalue']: .10g}")
        elif rep.name == "weight_positivity":
            print(f"  min(w) on inner domain: {rep.measured_constant:.10g}")
        elif rep.name == "hormander":
            print(f"  M_s = {rep.measured_constant:.6g}")
    for e in manifest.entries:
        if e["status"] in ("rejected", "error"):
            print(f"{e['name']}: {e['status'].upper()}  {e['reason']}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            text = merge_reports(args.paths)
            if args.output:
                Path(args.output).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "run":
            config = load_config(args.config)
            if args.out:
                config.output_dir = args.out
        else:
            experiments, extra = _experiments_for(args)
            config = _config_from_args(args, experiments, **extra)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest, reports = run(config)
    _print_summary(manifest, reports)
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
