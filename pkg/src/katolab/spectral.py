"""Hamiltonian assembly, dense diagonalization and the functional calculus.

Throughout, "continuous part" P_c means the span of eigenvectors with
eigenvalue above the zero threshold; the truncated operator has no genuine
continuous spectrum, so this is a modeling convention.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .grid import INF, Grid, OperatorMatrix, build_laplacian, kato_norm, lp_norm
from .reports import BoundReport

log = logging.getLogger(__name__)

Symbol = Callable[[np.ndarray], np.ndarray]


class SpectralGapError(RuntimeError):
    """An eigenvalue sits inside the zero threshold band."""


class SymbolError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    grid: Grid
    laplacian: OperatorMatrix
    potential: np.ndarray
    matrix: OperatorMatrix
    kato_norm_of_V: float


def assemble_hamiltonian(grid: Grid, V: np.ndarray) -> Hamiltonian:
    V = np.asarray(V, dtype=float)
    if V.shape != (grid.size,):
        raise ValueError(f"potential has shape {V.shape}, grid has {grid.size} points")
    lap = build_laplacian(grid)
    kernel = lap.kernel.copy()
    kernel[np.diag_indices_from(kernel)] += V / grid.weights
    return Hamiltonian(grid, lap, V, OperatorMatrix(grid, kernel), kato_norm(grid, V))


@dataclass(frozen=True)
class SpectralAssumptionReport:
    eigenvalues_in_gap: tuple
    zero_threshold: float

    @property
    def verdict(self) -> bool:
        return len(self.eigenvalues_in_gap) == 0


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenpairs of a discretized operator.

    ``eigenvectors[:, k]`` is orthonormal under the grid measure.
    """

    grid: Grid
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    zero_threshold: float
    potential: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.nonzero(self.eigenvalues < -self.zero_threshold)[0]

    @property
    def positive_indices(self) -> np.ndarray:
        return np.nonzero(self.eigenvalues > self.zero_threshold)[0]

    @property
    def gap_indices(self) -> np.ndarray:
        return np.nonzero(np.abs(self.eigenvalues) <= self.zero_threshold)[0]

    @property
    def assumption(self) -> SpectralAssumptionReport:
        return SpectralAssumptionReport(tuple(float(x) for x in self.eigenvalues[self.gap_indices]),
                                        self.zero_threshold)

    @property
    def bound_state_count(self) -> int:
        return int(self.negative_indices.size)

    def coefficients(self, f: np.ndarray, idx=None) -> np.ndarray:
        """<v_k, f>_mu for k in idx (default all)."""
        vecs = self.eigenvectors if idx is None else self.eigenvectors[:, idx]
        return vecs.T @ (f * self.grid.weights)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.grid.fingerprint().encode())
        if self.potential is not None:
            h.update(np.ascontiguousarray(self.potential).tobytes())
        return h.hexdigest()[:16]


def default_zero_threshold(eigenvalues: np.ndarray) -> float:
    return 1e-8 * float(np.max(np.abs(eigenvalues)))


def diagonalize(H: Hamiltonian | OperatorMatrix, zero_threshold: float | None = None) -> SpectralData:
    """Full symmetric eigendecomposition in the mu-weighted similarity form."""
    if isinstance(H, Hamiltonian):
        op, potential = H.matrix, H.potential
    else:
        op, potential = H, None
    grid = op.grid
    sq = np.sqrt(grid.weights)
    sym = sq[:, None] * op.kernel * sq[None, :]
    sym = 0.5 * (sym + sym.T)
    try:
        lam, W = linalg.eigh(sym, driver="evd")
    except linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
    vecs = W / sq[:, None]
    eps = default_zero_threshold(lam) if zero_threshold is None else float(zero_threshold)
    S = SpectralData(grid, lam, vecs, eps, potential)
    gap = S.assumption
    if not gap.verdict:
        log.warning("eigenvalues within the zero threshold %.3g: %s", eps, gap.eigenvalues_in_gap)
    return S


def free_spectral_data(grid: Grid) -> SpectralData:
    """Cached diagonalization of -Delta on ``grid``."""
    if "free_spectral" not in grid._cache:
        grid._cache["free_spectral"] = diagonalize(assemble_hamiltonian(grid, np.zeros(grid.size)))
    return grid._cache["free_spectral"]


class Part(str, enum.Enum):
    CONTINUOUS = "continuous"
    POINT = "point"


def _require_gap(S: SpectralData, override: bool = False):
    if not override and S.gap_indices.size:
        raise SpectralGapError(
            f"eigenvalues {S.assumption.eigenvalues_in_gap} lie within the zero threshold "
            f"{S.zero_threshold:.3g}; pass override=True to proceed")


def spectral_projector(S: SpectralData, part: Part = Part.CONTINUOUS, override: bool = False) -> OperatorMatrix:
    _require_gap(S, override)
    idx = S.positive_indices if Part(part) is Part.CONTINUOUS else S.negative_indices
    v = S.eigenvectors[:, idx]
    return OperatorMatrix(S.grid, v @ v.T)


def evaluate_symbol(S: SpectralData, symbol: Symbol, idx: np.ndarray) -> np.ndarray:
    lam = S.eigenvalues[idx]
    with np.errstate(all="ignore"):
        vals = np.asarray(symbol(lam))
    vals = np.broadcast_to(vals, lam.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise SymbolError(f"symbol is not finite at eigenvalue {lam[bad][0]!r}")
    return vals


def _indices(S: SpectralData, include_point: bool) -> np.ndarray:
    if include_point:
        return np.concatenate([S.negative_indices, S.positive_indices])
    return S.positive_indices


def apply_function(S: SpectralData, symbol: Symbol, f: np.ndarray, include_point: bool = False) -> np.ndarray:
    """m(H) P_c f, or m(H)(P_c + P_p) f with ``include_point``."""
    idx = _indices(S, include_point)
    m = evaluate_symbol(S, symbol, idx)
    return S.eigenvectors[:, idx] @ (m * S.coefficients(f, idx))


def kernel_of(S: SpectralData, symbol: Symbol, include_point: bool = False) -> OperatorMatrix:
    idx = _indices(S, include_point)
    m = evaluate_symbol(S, symbol, idx)
    v = S.eigenvectors[:, idx]
    return OperatorMatrix(S.grid, (v * m[None, :]) @ v.T)


def power_symbol(z: complex) -> Symbol:
    """lambda -> lambda ** z on positive eigenvalues."""
    if z == 0:
        return lambda lam: np.ones_like(lam)
    if isinstance(z, complex) and z.imag != 0:
        return lambda lam: np.power(lam.astype(complex), z)
    z = float(np.real(z))
    return lambda lam: np.power(lam, z)


def _sym_frobenius(A: OperatorMatrix) -> float:
    sq = np.sqrt(A.grid.weights)
    return float(np.linalg.norm(sq[:, None] * A.kernel * sq[None, :]))


def functional_calculus_report(S: SpectralData, tolerance: float = 1e-10) -> BoundReport:
    """Homomorphism, (H^1/2)^2 = H P_c and projection identities, as relative Frobenius errors.

    Errors are measured on the mu-symmetrized kernels, where the Frobenius
    norm dominates the operator 2-norm.
    """
    _require_gap(S)
    grid = S.grid

    def rel(A, B):
        return _sym_frobenius(A - B) / max(_sym_frobenius(B), 1e-300)

    f = lambda lam: np.exp(-lam / np.max(lam))
    g = lambda lam: 1.0 / (1.0 + lam)
    Pc = spectral_projector(S, Part.CONTINUOUS)
    Pp = spectral_projector(S, Part.POINT)
    V = np.zeros(grid.size) if S.potential is None else S.potential
    Hk = build_laplacian(grid).kernel.copy()
    Hk[np.diag_indices_from(Hk)] += V / grid.weights
    H = OperatorMatrix(grid, Hk)
    root = kernel_of(S, lambda lam: np.sqrt(lam))
    ident = OperatorMatrix(grid, np.diag(1.0 / grid.weights))
    errors = {
        "homomorphism": rel(kernel_of(S, f).compose(kernel_of(S, g)), kernel_of(S, lambda lam: f(lam) * g(lam))),
        "sqrt_squared": rel(root.compose(root), H.compose(Pc)),
        "pc_idempotent": rel(Pc.compose(Pc), Pc),
        "pc_plus_pp": rel(Pc + Pp, ident),
        "pc_pp_orthogonal": _sym_frobenius(Pc.compose(Pp)) / _sym_frobenius(Pc),
    }
    if S.bound_state_count:
        errors["pp_idempotent"] = rel(Pp.compose(Pp), Pp)
    worst = max(errors.values())
    return BoundReport("functional_calculus", worst <= tolerance, measured_constant=worst, tolerance=tolerance,
                       rows=[{"identity": k, "relative_error": v} for k, v in errors.items()],
                       metadata={"bound_states": S.bound_state_count})


class Order(str, enum.Enum):
    H_FIRST = "H_first"
    DELTA_FIRST = "Delta_first"


def intertwining_operator(S: SpectralData, S0: SpectralData, s: float, sigma: float = 0.0,
                          order: Order = Order.H_FIRST) -> OperatorMatrix:
    """H^z P_c (-Delta)^{-z} (``H_first``) or (-Delta)^z H^{-z} P_c (``Delta_first``), z = s + i sigma."""
    if not -1.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [-1, 1], got {s}")
    _require_gap(S)
    _require_gap(S0)
    z = complex(s, sigma) if sigma else s
    if Order(order) is Order.H_FIRST:
        a, b = kernel_of(S, power_symbol(z)), kernel_of(S0, power_symbol(-z))
    else:
        a, b = kernel_of(S0, power_symbol(z)), kernel_of(S, power_symbol(-z))
    return a.compose(b)


# --- operator norms -----------------------------------------------------------


@dataclass(frozen=True)
class BoundEstimate:
    """An operator-norm value; ``exact`` False means a certified lower bound."""

    value: float
    exact: bool
    method: str
    p: float
    q: float
    witness: str = ""


def _conj_exp(p: float) -> float:
    if p == 1:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


def _row_norms(grid: Grid, K: np.ndarray, r: float) -> np.ndarray:
    if r == INF:
        return np.max(np.abs(K), axis=1)
    return np.sum(np.abs(K) ** r * grid.weights[None, :], axis=1) ** (1.0 / r)


def _dual_vector(y: np.ndarray, r: float) -> np.ndarray:
    """Unit-norm element of l^{r'} attaining <y, g> = ||y||_r."""
    a = np.abs(y)
    phase = np.where(a > 0, y / np.where(a > 0, a, 1), 0)
    if r == INF:
        g = np.zeros_like(y)
        k = int(np.argmax(a))
        g[k] = np.conj(phase[k])
        return g
    if r == 1:
        return np.conj(phase)
    norm = np.sum(a**r) ** (1.0 / r)
    if norm == 0:
        return np.zeros_like(y)
    return np.conj(phase) * (a / norm) ** (r - 1)


def _seq_norm(x: np.ndarray, r: float) -> float:
    if r == INF:
        return float(np.max(np.abs(x)))
    return float(np.sum(np.abs(x) ** r) ** (1.0 / r))


def boyd_power_iteration(T: OperatorMatrix, p: float, q: float, x0: np.ndarray,
                         iterations: int = 40) -> tuple[float, np.ndarray]:
    """Nonlinear power method for ||T||_{L^p -> L^q}; every iterate gives a lower bound."""
    mu = T.grid.weights
    wq = mu ** (1.0 / q) if q != INF else np.ones_like(mu)
    wp = mu ** (1.0 / p) if p != INF else np.ones_like(mu)
    # l^p -> l^q matrix with the same norm as T on L^p(mu) -> L^q(mu)
    B = wq[:, None] * T.kernel * (mu / wp)[None, :]
    x = x0 * wp
    x = x / _seq_norm(x, p)
    best, best_x = 0.0, x0
    pd = _conj_exp(p)
    for _ in range(iterations):
        y = B @ x
        val = _seq_norm(y, q)
        if val > best:
            best, best_x = val, x / wp
        z = B.T @ _dual_vector(y, q)
        if not np.any(z):
            break
        x_new = _dual_vector(z, pd)
        x_new = x_new / _seq_norm(x_new, p)
        if np.allclose(x_new, x, rtol=1e-12, atol=1e-14):
            break
        x = x_new
    return best, best_x


def opnorm_estimate(T: OperatorMatrix, p: float, q: float, probes=None,
                    power_iterations: int = 40) -> BoundEstimate:
    """||T||_{L^p -> L^q} on the grid measure.

    Exact for (2, 2), for p = 1 (sup of column L^q norms) and for q = inf
    (sup of row L^{p'} norms).  Otherwise the largest ratio over the probe
    family, refined by a nonlinear power iteration, as a lower bound.
    """
    for e in (p, q):
        if not (e == INF or e >= 1):
            raise ValueError(f"exponents must lie in [1, inf], got {e}")
    grid = T.grid
    if p == 2 and q == 2:
        sq = np.sqrt(grid.weights)
        s = linalg.svdvals(sq[:, None] * T.kernel * sq[None, :])
        return BoundEstimate(float(s[0]), True, "svd", p, q)
    if p == 1:
        cols = _row_norms(grid, T.kernel.T, q)
        k = int(np.argmax(cols))
        return BoundEstimate(float(cols[k]), True, "column-norm", p, q, witness=f"column {k}")
    if q == INF:
        rows = _row_norms(grid, T.kernel, _conj_exp(p))
        k = int(np.argmax(rows))
        return BoundEstimate(float(rows[k]), True, "row-norm", p, q, witness=f"row {k}")
    if probes is None or len(probes) == 0:
        raise ValueError("a non-empty probe family is required for this (p, q)")
    best, witness, best_f = 0.0, "", None
    for label, f in probes:
        den = lp_norm(grid, f, p)
        if den == 0:
            continue
        r = lp_norm(grid, T.apply(f), q) / den
        if r > best:
            best, witness, best_f = r, label, f
    method = "probe-lower-bound"
    if power_iterations and best_f is not None:
        val, _ = boyd_power_iteration(T, p, q, best_f.astype(complex if np.iscomplexobj(T.kernel) else float),
                                      power_iterations)
        if val > best:
            best, witness = val, f"{witness}+power-iteration"
            method = "probe+power-lower-bound"
    return BoundEstimate(float(best), False, method, p, q, witness=witness)


# --- bound states -------------------------------------------------------------


def bound_state_decay_check(S: SpectralData, tolerance: float = 0.15,
                            window: tuple[float, float] = (0.25, 0.6)) -> BoundReport:
    """Fit the exponential tail rate of each bound state against sqrt(-lambda)."""
    rows = []
    grid = S.grid
    r = grid.radius
    lo, hi = window[0] * grid.extent, window[1] * grid.extent
    for k in S.negative_indices:
        mu_n = math.sqrt(-S.eigenvalues[k])
        v = np.abs(S.eigenvectors[:, k])
        sel = (r >= max(lo, 1.0 / mu_n)) & (r <= hi) & (v > 0)
        if grid.radial:
            y = np.log(v[sel] * np.sqrt(1.0 + r[sel] ** 2))
            x = r[sel]
        else:
            # envelope over shells: largest |v| in each radial bin
            bins = np.linspace(r[sel].min(), r[sel].max(), 12)
            which = np.digitize(r[sel], bins)
            xs, ys = [], []
            for b in np.unique(which):
                m = which == b
                j = np.argmax(v[sel][m])
                xs.append(r[sel][m][j])
                ys.append(np.log(v[sel][m][j] * math.sqrt(1.0 + xs[-1] ** 2)))
            x, y = np.array(xs), np.array(ys)
        slope, intercept = np.polyfit(x, y, 1)
        rate = -slope
        rows.append({"index": int(k), "eigenvalue": float(S.eigenvalues[k]), "mu": mu_n,
                     "fitted_rate": float(rate), "relative_error": abs(rate - mu_n) / mu_n,
                     "constant": float(math.exp(intercept))})
    ok = all(row["relative_error"] <= tolerance for row in rows)
    return BoundReport(
        name="bound_state_decay",
        verdict=ok,
        measured_constant=max((row["constant"] for row in rows), default=None),
        tolerance=tolerance,
        status="pass" if ok else "fail",
        rows=rows,
        metadata={"bound_states": len(rows), "window": list(window)},
    )


# --- text export --------------------------------------------------------------

_DUMP_HEADER = "# katolab spectral dump v1"


def save_spectral_data(S: SpectralData, path, include_vectors: bool = True) -> None:
    """Plain-text dump: header, eigenvalues, then the eigenvector matrix row-major."""
    n = S.grid.size
    with open(path, "w") as fh:
        fh.write(_DUMP_HEADER + "\n")
        fh.write(f"grid {S.grid.mode.value} {S.grid.extent!r} {S.grid.spec.points_per_axis}\n")
        fh.write(f"zero_threshold {S.zero_threshold!r}\n")
        fh.write(f"fingerprint {S.fingerprint()}\n")
        fh.write(f"eigenvalues {n}\n")
        np.savetxt(fh, S.eigenvalues[None, :], fmt="%.17g")
        if S.potential is not None:
            fh.write(f"potential {n}\n")
            np.savetxt(fh, S.potential[None, :], fmt="%.17g")
        if include_vectors:
            fh.write(f"eigenvectors {n} {n}\n")
            np.savetxt(fh, S.eigenvectors, fmt="%.17g")


def load_spectral_data(grid: Grid, path) -> SpectralData:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != _DUMP_HEADER:
            raise ValueError(f"{path}: not a spectral dump")
        gline = fh.readline().split()
        if gline[1] != grid.mode.value or float(gline[2]) != grid.extent or int(gline[3]) != grid.spec.points_per_axis:
            raise ValueError(f"{path}: grid mismatch")
        eps = float(fh.readline().split()[1])
        fh.readline()
        n = int(fh.readline().split()[1])
        lam = np.array(fh.readline().split(), dtype=float)
        potential = None
        vecs = None
        line = fh.readline()
        if line.startswith("potential"):
            potential = np.array(fh.readline().split(), dtype=float)
            line = fh.readline()
        if line.startswith("eigenvectors"):
            vecs = np.loadtxt(fh, ndmin=2)
        if vecs is None or vecs.shape != (n, n):
            raise ValueError(f"{path}: eigenvector block missing or malformed")
    return SpectralData(grid, lam, vecs, eps, potential)
