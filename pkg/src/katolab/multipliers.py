"""Multiplier symbols, dyadic cutoffs, Hormander norms and Paley-Wiener pieces.

A ``MultiplierSymbol`` is a function m of the frequency variable, applied
to the operator as m(sqrt(H)).  Paley-Wiener pieces use the partition
cutoff so that they telescope exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import INF, OperatorMatrix, lp_norm
from .reports import BoundReport, fit_log2, fit_loglog
from .spectral import SpectralData, evaluate_symbol, kernel_of, opnorm_estimate

log = logging.getLogger(__name__)


# --- cutoffs ------------------------------------------------------------------


def _transition(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def smooth_step(lam) -> np.ndarray:
    """psi: 0 on (0, 1/2], 1 on [2, inf), smooth and monotone in log(lam)."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        u = 0.5 * (np.log2(np.maximum(lam, 0.0)) + 1.0)
    return _transition(u)


def partition_profile(lam) -> np.ndarray:
    """phi(lam) = psi(lam) - psi(lam / 2); supported in [1/2, 4], telescopes to 1."""
    lam = np.asarray(lam, dtype=float)
    return smooth_step(lam) - smooth_step(lam / 2.0)


def plateau_profile(lam) -> np.ndarray:
    """Bump supported in [1/2, 4] and identically 1 on [1, 2]."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        l2 = np.log2(np.maximum(lam, 0.0))
    return _transition(l2 + 1.0) * (1.0 - _transition(l2 - 1.0))


@dataclass(frozen=True)
class DyadicCutoff:
    profile: Callable[[np.ndarray], np.ndarray]
    label: str
    partition: bool
    support: tuple = (0.5, 4.0)

    def __call__(self, lam):
        return self.profile(lam)

    def partition_sum(self, lam) -> np.ndarray:
        """sum_k phi(2^-k lam) over the finitely many k with support overlap."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        kmin = np.floor(np.log2(lam / self.support[1])) - 1
        kmax = np.ceil(np.log2(lam / self.support[0])) + 1
        out = np.zeros_like(lam)
        for k in range(int(kmin.min()), int(kmax.max()) + 1):
            out += self.profile(lam * 2.0 ** (-k))
        return out


def standard_cutoff() -> DyadicCutoff:
    """Partition variant phi = psi(.) - psi(./2)."""
    return DyadicCutoff(partition_profile, "partition", True)


def plateau_cutoff() -> DyadicCutoff:
    """Variant with phi = 1 on [1, 2], used in the Hormander norm."""
    return DyadicCutoff(plateau_profile, "plateau", False)


# --- symbols --------------------------------------------------------------------


@dataclass(frozen=True)
class MultiplierSymbol:
    """m on (0, inf) with optional closed-form first and second derivatives."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    label: str
    derivatives: tuple = ()
    tabulated: bool = False
    expected_hormander: bool | None = None
    compact: tuple | None = None

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))

    def of_sqrt(self) -> Callable[[np.ndarray], np.ndarray]:
        """Symbol in the eigenvalue variable: lam -> m(sqrt(lam))."""
        return lambda lam: self.evaluator(np.sqrt(lam))

    def check_finite(self, decades: int = 12) -> None:
        x = np.logspace(-decades / 2, decades / 2, 24 * decades + 1)
        v = self(x)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"symbol {self.label} is not finite on (0, inf)")


def constant_symbol(c: complex = 1.0) -> MultiplierSymbol:
    return MultiplierSymbol(lambda x: np.full(np.shape(x), c), f"const:{c}",
                            (lambda x: np.zeros(np.shape(x)), lambda x: np.zeros(np.shape(x))),
                            expected_hormander=True)


def imaginary_power(sigma: float) -> MultiplierSymbol:
    """x^{i sigma}."""
    return MultiplierSymbol(
        lambda x: np.exp(1j * sigma * np.log(x)),
        f"powi:{sigma:g}",
        (lambda x: 1j * sigma * np.exp(1j * sigma * np.log(x)) / x,
         lambda x: 1j * sigma * (1j * sigma - 1) * np.exp(1j * sigma * np.log(x)) / x**2),
        expected_hormander=True,
    )


def dyadic_bump(k: float = 0.0) -> MultiplierSymbol:
    """phi(2^-k x) with the partition profile."""
    return MultiplierSymbol(lambda x: partition_profile(x * 2.0 ** (-k)), f"bump:{k:g}",
                            expected_hormander=True, compact=(0.5 * 2.0**k, 4.0 * 2.0**k))


def smoothed_heaviside(k: float = 0.0) -> MultiplierSymbol:
    return MultiplierSymbol(lambda x: smooth_step(x * 2.0 ** (-k)), f"smoothstep:{k:g}",
                            expected_hormander=True)


def truncated_power(s: float, lo: float, hi: float) -> MultiplierSymbol:
    """x^s smoothly restricted to [lo, hi] by dyadic cutoffs."""
    def m(x):
        return x**s * smooth_step(x / lo) * (1.0 - smooth_step(x / (hi / 2.0)))
    return MultiplierSymbol(m, f"powtrunc:{s:g},{lo:g},{hi:g}", expected_hormander=True,
                            compact=(lo / 2.0, hi * 2.0))


def heaviside(threshold: float = 1.0) -> MultiplierSymbol:
    return MultiplierSymbol(lambda x: (np.asarray(x) > threshold).astype(float), f"jump:{threshold:g}",
                            expected_hormander=False)


def tabulated_symbol(path) -> MultiplierSymbol:
    """Symbol from a two-column (x, value) file with increasing x, linearly interpolated."""
    path = Path(path)
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
    x, v = data[:, 0], data[:, 1]
    if np.any(np.diff(x) <= 0):
        raise ValueError(f"{path}: abscissae must be strictly increasing")
    return MultiplierSymbol(lambda y: np.interp(y, x, v), f"file:{path}", tabulated=True)


def parse_symbol(text: str) -> MultiplierSymbol:
    """``one``, ``powi:sigma`` (also ``powiσ:sigma``), ``bump:k``, ``smoothstep:k``,
    ``powtrunc:s,lo,hi``, ``jump:x0``, ``file:path``."""
    name, _, args = text.strip().partition(":")
    name = name.lower().replace("σ", "")
    if name == "file":
        return tabulated_symbol(args)
    vals = [float(a) for a in args.split(",") if a.strip()]
    if name in ("one", "const"):
        return constant_symbol(vals[0] if vals else 1.0)
    if name == "powi":
        return imaginary_power(vals[0])
    if name == "bump":
        return dyadic_bump(vals[0] if vals else 0.0)
    if name == "smoothstep":
        return smoothed_heaviside(vals[0] if vals else 0.0)
    if name == "powtrunc":
        return truncated_power(*vals)
    if name == "jump":
        return heaviside(vals[0] if vals else 1.0)
    raise ValueError(f"unknown symbol {text!r}")


def symbol_catalog() -> list[MultiplierSymbol]:
    return [constant_symbol(), imaginary_power(2.0), truncated_power(0.5, 1.0, 16.0),
            dyadic_bump(1.0), smoothed_heaviside(0.0), heaviside(1.0)]


# --- Hormander / Mihlin ---------------------------------------------------------


@dataclass
class HormanderReport:
    label: str
    s: float
    scales: list[int]
    per_scale: list[float]
    M_s: float
    mihlin: list[float]
    refinement_ratio: float
    hormander: bool
    metadata: dict = field(default_factory=dict)


def sobolev_norm_sampled(values: np.ndarray, spacing: float, s: float, pad: int = 8) -> float:
    """H^s norm of a compactly supported sampled function via a zero-padded DFT."""
    n = values.size * pad
    G = np.fft.fft(values, n) * spacing
    xi = 2.0 * np.pi * np.fft.fftfreq(n, spacing)
    weight = (1.0 + xi**2) ** s
    return float(math.sqrt(np.sum(weight * np.abs(G) ** 2) / (n * spacing)))


def _mihlin_constants(m: MultiplierSymbol, x: np.ndarray) -> list[float]:
    vals = [float(np.max(np.abs(m(x))))]
    if len(m.derivatives) >= 2:
        d1, d2 = m.derivatives[0](x), m.derivatives[1](x)
    else:
        # derivatives in t = log x, converted back: x m' = dm/dt, x^2 m'' = d2m/dt2 - dm/dt
        t = np.log(x)
        dt = 1e-3
        f0, fp, fm = m(np.exp(t)), m(np.exp(t + dt)), m(np.exp(t - dt))
        dm = (fp - fm) / (2 * dt)
        d2m = (fp - 2 * f0 + fm) / dt**2
        d1, d2 = dm / x, (d2m - dm) / x**2
    vals.append(float(np.max(np.abs(x * d1))))
    vals.append(float(np.max(np.abs(x**2 * d2))))
    return vals


def hormander_norm(m: MultiplierSymbol, s: float, window: Sequence[int] = range(-6, 7),
                   samples: int = 2048, refine_tolerance: float = 0.05) -> HormanderReport:
    """sup_k ||phi(x) m(2^-k x)||_{H^s} over ``window`` with the plateau cutoff.

    The computation is repeated at twice the sampling density; a change
    beyond ``refine_tolerance`` marks the symbol as non-Hormander at this s.
    """
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    phi = plateau_cutoff()

    def per_scale(nsamp):
        x = np.linspace(0.25, 8.0, nsamp)
        dx = x[1] - x[0]
        out = []
        for k in window:
            g = phi(x) * m(x * 2.0 ** (-k))
            if not np.all(np.isfinite(g)):
                raise ValueError(f"symbol {m.label} not finite on the sampled range at scale {k}")
            out.append(sobolev_norm_sampled(g, dx, s))
        return out

    norms = per_scale(samples)
    fine = per_scale(2 * samples)
    Ms, Ms_fine = max(norms), max(fine)
    ratio = Ms_fine / Ms if Ms > 0 else 1.0
    kmin, kmax = min(window), max(window)
    x = np.logspace(kmin - 1, kmax + 2, 4000, base=2.0)
    mihlin = _mihlin_constants(m, x)
    ok = abs(ratio - 1.0) <= refine_tolerance and all(math.isfinite(c) for c in mihlin)
    return HormanderReport(m.label, s, list(window), norms, Ms, mihlin, ratio, ok,
                           {"samples": samples, "tabulated": m.tabulated,
                            "theorem_threshold": 1.5, "above_threshold": s > 1.5})


def hormander_report(m: MultiplierSymbol, s: float, **kw) -> BoundReport:
    hr = hormander_norm(m, s, **kw)
    rows = [{"k": k, "norm": v} for k, v in zip(hr.scales, hr.per_scale)]
    return BoundReport("hormander", hr.hormander, measured_constant=hr.M_s,
                       status="pass" if hr.hormander else "non-hormander", rows=rows,
                       metadata={"symbol": hr.label, "s": s, "mihlin": hr.mihlin,
                                 "refinement_ratio": hr.refinement_ratio, **hr.metadata})


# --- Paley-Wiener pieces ----------------------------------------------------------


def active_window(S: SpectralData) -> tuple[int, int]:
    lam = S.eigenvalues[S.positive_indices]
    nmin = math.floor(math.log2(math.sqrt(lam.min()))) - 1
    nmax = math.ceil(math.log2(math.sqrt(lam.max()))) + 1
    return nmin, nmax


def pw_symbol(n: int) -> Callable:
    return lambda lam: partition_profile(np.sqrt(lam) * 2.0 ** (-n))


def pw_projection(S: SpectralData, n: int) -> OperatorMatrix:
    return kernel_of(S, pw_symbol(n))


def pw_low(S: SpectralData, n: int) -> OperatorMatrix:
    """sum_{n' <= n} P_n' = (1 - psi(2^{-n-1} sqrt(H))) P_c by telescoping."""
    return kernel_of(S, lambda lam: 1.0 - smooth_step(np.sqrt(lam) * 2.0 ** (-n - 1)))


def pw_high(S: SpectralData, n: int) -> OperatorMatrix:
    """sum_{n' >= n} P_n' = psi(2^-n sqrt(H)) P_c."""
    return kernel_of(S, lambda lam: smooth_step(np.sqrt(lam) * 2.0 ** (-n)))


@dataclass
class SquareFunctionResult:
    scales: list[int]
    pieces: np.ndarray  # (len(scales), grid.size)
    square: np.ndarray

    @property
    def window(self) -> tuple[int, int]:
        return self.scales[0], self.scales[-1]


def square_function(S: SpectralData, f: np.ndarray) -> SquareFunctionResult:
    nmin, nmax = active_window(S)
    idx = S.positive_indices
    coef = S.coefficients(f, idx)
    x = np.sqrt(S.eigenvalues[idx])
    scales = list(range(nmin, nmax + 1))
    phis = np.array([partition_profile(x * 2.0 ** (-n)) for n in scales])
    pieces = (S.eigenvectors[:, idx] @ (phis * coef[None, :]).T).T
    square = np.sqrt(np.sum(np.abs(pieces) ** 2, axis=0))
    return SquareFunctionResult(scales, pieces, square)


def partition_square_bracket(samples: int = 20001) -> tuple[float, float]:
    """min and max over x of sum_k phi(2^-k x)^2 (one octave suffices by scaling)."""
    x = np.logspace(0.0, 1.0, samples, base=2.0)
    total = np.zeros_like(x)
    for k in range(-3, 4):
        total += partition_profile(x * 2.0 ** (-k)) ** 2
    return float(total.min()), float(total.max())


def sqf_equivalence_report(S: SpectralData, probes, p_list=(1.5, 2.0, 3.0),
                           brackets: dict | None = None) -> BoundReport:
    """min/max of ||S_H f||_p / ||P_c f||_p over the probe family, per p."""
    grid = S.grid
    lo2, hi2 = partition_square_bracket()
    rows = []
    ok = True
    for p in p_list:
        if not 1 < p < INF:
            raise ValueError(f"square-function exponents must lie in (1, inf), got {p}")
        ratios = []
        for label, f in probes:
            pc = S.eigenvectors[:, S.positive_indices] @ S.coefficients(f, S.positive_indices)
            den = lp_norm(grid, pc, p)
            if den == 0:
                continue
            ratios.append(lp_norm(grid, square_function(S, f).square, p) / den)
        ratios = np.array(ratios)
        if p == 2:
            lo, hi = math.sqrt(lo2), 1.0
        else:
            B = (brackets or {}).get(p, 10.0)
            lo, hi = 1.0 / B, B
        row_ok = bool(ratios.size and ratios.min() >= lo * (1 - 1e-10) and ratios.max() <= hi * (1 + 1e-10))
        ok &= row_ok
        rows.append({"p": p, "min_ratio": float(ratios.min()), "max_ratio": float(ratios.max()),
                     "spread": float(ratios.max() / ratios.min()), "bracket_lo": lo, "bracket_hi": hi,
                     "probes": int(ratios.size), "ok": row_ok})
    return BoundReport("square_function_equivalence", ok, rows=rows,
                       metadata={"sum_phi_sq_min": lo2, "sum_phi_sq_max": hi2})


def sqf_drift_report(S: SpectralData, probes, enriched, p_list=(1.5, 2.0, 3.0),
                     drift_tolerance: float = 0.1) -> BoundReport:
    """Spread of the square-function ratios on a family and on an enriched superset."""
    a = sqf_equivalence_report(S, probes, p_list)
    b = sqf_equivalence_report(S, enriched, p_list)
    rows, ok = [], True
    for ra, rb in zip(a.rows, b.rows):
        drift = abs(rb["spread"] / ra["spread"] - 1.0)
        row_ok = drift <= drift_tolerance and ra["ok"] and rb["ok"]
        ok &= row_ok
        rows.append({"p": ra["p"], "spread": ra["spread"], "enriched_spread": rb["spread"], "drift": drift,
                     "min_ratio": rb["min_ratio"], "max_ratio": rb["max_ratio"], "ok": row_ok})
    return BoundReport("square_function_drift", ok, tolerance=drift_tolerance, rows=rows,
                       metadata={**b.metadata, "probes": len(probes), "enriched_probes": len(enriched)})


def resolved_scales(S: SpectralData, margin: float = 0.5) -> tuple[int, int]:
    """Scales n whose cutoff 2^{n+2} stays below margin/h and above a few 1/R."""
    g = S.grid
    hi = math.floor(math.log2(margin / g.h)) - 2
    lo = math.ceil(math.log2(8.0 / g.extent))
    return lo, hi


def pw_norm_scaling_report(S: SpectralData, p: float, q: float, n_range: Sequence[int] | None = None,
                           tolerance: float = 0.3, probes=None, spread_limit: float = 3.0) -> BoundReport:
    """Growth of ||P_{<=n}||_{p->q} in n, fitted as a power of 2."""
    if not (1 <= p <= q):
        raise ValueError("need 1 <= p <= q <= inf")
    lo, hi = resolved_scales(S)
    ns = list(range(lo, hi + 1)) if n_range is None else list(n_range)
    trimmed = [n for n in ns if lo <= n <= hi]
    if len(trimmed) < len(ns):
        log.warning("trimmed scale range %s to resolved scales [%d, %d]", ns, lo, hi)
    ns = trimmed
    if len(ns) < 2:
        raise ValueError("fewer than two resolved scales")
    norms, exact = [], True
    for n in ns:
        est = opnorm_estimate(pw_low(S, n), p, q, probes)
        norms.append(est.value)
        exact &= est.exact
    inv = (1.0 / p) - (0.0 if q == INF else 1.0 / q)
    expected = 2.0 * inv
    slope, _ = fit_log2(ns, norms)
    rows = [{"n": n, "norm": v} for n, v in zip(ns, norms)]
    meta = {"p": p, "q": q, "exact": exact, "dimensional_exponent": 3.0 * inv,
            "resolved_scales": [lo, hi]}
    if p == q:
        spread = max(norms) / min(norms)
        meta["spread"] = spread
        ok = spread <= spread_limit
        return BoundReport(f"pw_uniform_{p:g}_{q:g}", ok, measured_constant=max(norms), fitted_slope=slope,
                           expected_slope=0.0, tolerance=tolerance, rows=rows, metadata=meta)
    ok = abs(slope - expected) <= tolerance
    return BoundReport(f"pw_scaling_{p:g}_{q:g}", ok, measured_constant=max(norms), fitted_slope=slope,
                       expected_slope=expected, tolerance=tolerance, rows=rows, metadata=meta)


def kernel_decay_fit(K: OperatorMatrix, x_index: int, min_distance: float) -> float:
    """Log-log slope of |K(x, y)| against |x - y| beyond ``min_distance``."""
    d = K.grid.distances([x_index])[0]
    v = np.abs(K.kernel[x_index])
    sel = (d >= min_distance) & (v > 0) & K.grid.inner_mask()
    slope, _ = fit_loglog(d[sel], v[sel])
    return slope
