"""The weight w, ground-state checks and weak maximum principle checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .grid import Grid, NewtonMode, OperatorMatrix, kato_norm, laplacian_action, lp_norm, newtonian_inverse
from .reports import BoundReport
from .spectral import SpectralData, SpectralGapError, apply_function

DEFAULT_INNER = 0.6


class ResonanceError(RuntimeError):
    """The system defining w is singular or badly conditioned."""


@dataclass
class WeightResult:
    w: np.ndarray
    essential_lower_bound: float
    limit_at_infinity_proxy: float
    residual: float
    cross_check: float
    condition_estimate: float
    boundary_layer: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items() if k != "w"}


def _project_c(S: SpectralData, f: np.ndarray) -> np.ndarray:
    return apply_function(S, lambda lam: np.ones_like(lam), f)


def compute_weight(S: SpectralData, inverse_mode: NewtonMode = NewtonMode.MATRIX_INVERSE,
                   inner_fraction: float = DEFAULT_INNER, max_condition: float = 1e12) -> WeightResult:
    """w = P_c (I + (-Delta)^-1 V)^-1 1, cross-checked against P_c 1 - P_c H^-1 V."""
    if S.gap_indices.size:
        raise SpectralGapError("weight requested with an eigenvalue in the zero band")
    grid = S.grid
    V = np.zeros(grid.size) if S.potential is None else S.potential
    if not np.any(V) and S.negative_indices.size == 0:
        # P_c is the identity and I + G V = I, so w = 1 without eigenbasis roundoff
        w, cross, cond = np.ones(grid.size), 0.0, 1.0
    else:
        G = newtonian_inverse(grid, inverse_mode)
        A = np.eye(grid.size) + G.action * V[None, :]
        lu, piv = linalg.lu_factor(A, check_finite=False)
        rcond, _ = linalg.lapack.dgecon(lu, np.linalg.norm(A, 1), norm="1")
        cond = 1.0 / rcond if rcond > 0 else math.inf
        if not math.isfinite(cond) or cond > max_condition:
            raise ResonanceError(f"(I + G V) has condition number {cond:.3g}; possible zero-energy resonance")
        u = linalg.lu_solve((lu, piv), np.ones(grid.size))
        w = _project_c(S, u)
        # alternative: P_c 1 - P_c H^-1 V, with H^-1 applied on the whole spectrum
        idx = np.concatenate([S.negative_indices, S.positive_indices])
        lam = S.eigenvalues[idx]
        hv = S.eigenvectors[:, idx] @ (S.coefficients(V, idx) / lam)
        alt = _project_c(S, np.ones(grid.size) - hv)
        cross = float(np.max(np.abs(w - alt)) / max(np.max(np.abs(w)), 1e-300))
    inner = grid.inner_mask(inner_fraction)
    Hw = laplacian_action(grid) @ w + V * w
    resid = float(lp_norm(grid, np.where(inner, Hw, 0.0), 2) / lp_norm(grid, w, 2))
    dist = grid.boundary_distance()
    outer = dist <= 0.1 * grid.extent
    shell = (dist > 0.1 * grid.extent) & (dist <= 0.4 * grid.extent)
    # boundary layer: distance from the wall where w first drops 10% below its shell mean
    proxy = float(np.sum(w[shell] * grid.weights[shell]) / np.sum(grid.weights[shell]))
    low = outer & (w < 0.9 * proxy)
    layer = float(dist[low].max()) if low.any() else 0.0
    return WeightResult(w, float(w[inner].min()), proxy, resid, cross, cond, layer)


def weight_report(S: SpectralData, **kw) -> BoundReport:
    res = compute_weight(S, **kw)
    ok = res.essential_lower_bound > 0
    return BoundReport("weight_positivity", ok, measured_constant=res.essential_lower_bound,
                       metadata={**res.to_dict(), "bound_states": S.bound_state_count,
                                 "kato_norm": kato_norm(S.grid, S.potential) if S.potential is not None else 0.0})


def ground_state_report(S: SpectralData, inner_fraction: float = DEFAULT_INNER,
                        simplicity_gap: float = 1e-8) -> BoundReport:
    """Lowest eigenvalue simple and its eigenvector of one strict sign on the inner domain."""
    neg = S.negative_indices
    if neg.size == 0:
        return BoundReport("ground_state", True, status="vacuous", metadata={"bound_states": 0})
    k0 = int(np.argmin(S.eigenvalues))
    lam = np.sort(S.eigenvalues)
    gap = float(lam[1] - lam[0])
    simple = gap > simplicity_gap * abs(lam[0])
    v = S.eigenvectors[:, k0]
    v = v * np.sign(v[np.argmax(np.abs(v))])
    inner = S.grid.inner_mask(inner_fraction)
    vmin = float(v[inner].min())
    positive = vmin > 0
    meta = {"ground_energy": float(lam[0]), "gap": gap, "inner_min": vmin, "bound_states": int(neg.size)}
    if neg.size > 1:
        k1 = int(np.argsort(S.eigenvalues)[1])
        v1 = S.eigenvectors[:, k1][inner]
        meta["first_excited_changes_sign"] = bool(v1.min() < 0 < v1.max())
    return BoundReport("ground_state", simple and positive, measured_constant=vmin, metadata=meta)


def weak_mp_check(S: SpectralData, g: np.ndarray, inner_fraction: float = DEFAULT_INNER,
                  tolerance: float = 1e-8) -> BoundReport:
    """Solve H f = g for g >= 0 and check f >= 0 on the inner domain.

    Requires V >= 0, or a Kato norm of the negative part below 4 pi.
    """
    if np.any(g < 0):
        raise ValueError("right-hand side must be non-negative")
    grid = S.grid
    V = np.zeros(grid.size) if S.potential is None else S.potential
    kneg = kato_norm(grid, np.minimum(V, 0.0))
    meta = {"kato_norm_negative_part": kneg, "threshold": 4 * math.pi}
    if not (np.all(V >= 0) or kneg < 4 * math.pi):
        return BoundReport("weak_maximum_principle", False, status="hypothesis-not-met", metadata=meta)
    A = laplacian_action(grid) + np.diag(V)
    try:
        f = linalg.solve(A, g)
    except linalg.LinAlgError as exc:
        raise SpectralGapError(f"H is singular: {exc}") from exc
    inner = grid.inner_mask(inner_fraction)
    fmin = float(f[inner].min())
    scale = float(np.max(np.abs(f)))
    ok = fmin >= -tolerance * scale
    meta.update({"inner_min": fmin, "sup": scale})
    return BoundReport("weak_maximum_principle", ok, measured_constant=fmin, tolerance=tolerance, metadata=meta)


def sine_on_weight(S: SpectralData, w: np.ndarray, t: float) -> float:
    """Relative deviation of sin(t sqrt H)/sqrt H w from t w."""
    u = apply_function(S, lambda lam: np.sin(t * np.sqrt(lam)) / np.sqrt(lam), w)
    return float(np.max(np.abs(u - t * w)) / (t * np.max(np.abs(w))))
