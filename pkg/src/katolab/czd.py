"""Weighted Calderon-Zygmund decomposition, tilde transform, Hardy atoms, weak-type studies.

Dyadic cubes live on box grids whose side ``N`` is a power of two, so the
stopping-time descent reaches single cells.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Grid, OperatorMatrix, laplacian_action, lp_norm, newtonian_inverse, weak_l1_quasinorm
from .multipliers import MultiplierSymbol, hormander_norm
from .reports import BoundReport, fit_loglog
from .spectral import SpectralData, SpectralGapError, kernel_of


log = logging.getLogger(__name__)


class CZError(ValueError):
    pass


@dataclass(frozen=True)
class DyadicCube:
    """Cube of ``side`` cells with lowest corner ``corner`` on an N^3 box grid."""

    level: int
    corner: tuple
    side: int
    n: int

    def children(self) -> list["DyadicCube"]:
        if self.side < 2:
            return []
        h = self.side // 2
        i, j, k = self.corner
        return [DyadicCube(self.level + 1, (i + a * h, j + b * h, k + c * h), h, self.n)
                for a in (0, 1) for b in (0, 1) for c in (0, 1)]

    def indices(self) -> np.ndarray:
        i, j, k = self.corner
        r = np.arange(self.side)
        I, J, K = np.meshgrid(i + r, j + r, k + r, indexing="ij")
        return ((I * self.n + J) * self.n + K).ravel()

    def contains(self, other: "DyadicCube") -> bool:
        return all(a <= b and b + other.side <= a + self.side for a, b in zip(self.corner, other.corner))

    def side_length(self, grid: Grid) -> float:
        return self.side * grid.h

    def to_dict(self) -> dict:
        return {"level": self.level, "corner": list(self.corner), "side": self.side}


def root_cube(grid: Grid) -> DyadicCube:
    if grid.radial:
        raise CZError("dyadic cubes need a box grid")
    n = grid.spec.points_per_axis
    if n & (n - 1):
        raise CZError(f"box side {n} is not a power of two")
    return DyadicCube(0, (0, 0, 0), n, n)


def cubes_at_level(grid: Grid, level: int) -> list[DyadicCube]:
    cubes = [root_cube(grid)]
    for _ in range(level):
        cubes = [c for q in cubes for c in q.children()]
    return cubes


@dataclass
class CZDecomposition:
    alpha: float
    f: np.ndarray
    g: np.ndarray
    cubes: list
    bad: list
    weight: np.ndarray
    root_selected: bool = False

    def measure(self, cube: DyadicCube, grid: Grid) -> float:
        idx = cube.indices()
        return float(np.sum(self.weight[idx] * grid.weights[idx]))

    def verify(self, grid: Grid) -> dict:
        """Re-check the four properties; returns measured constants and errors."""
        mu_t = self.weight * grid.weights
        recon = self.g + sum(self.bad, np.zeros_like(self.f))
        scale = max(float(np.max(np.abs(self.f))), 1e-300)
        support_ok = True
        means = []
        for cube, b in zip(self.cubes, self.bad):
            idx = cube.indices()
            support_ok &= np.count_nonzero(b) == np.count_nonzero(b[idx])
            means.append(abs(float(np.sum(b * mu_t))) / max(float(np.sum(np.abs(b) * mu_t)), 1e-300))
        total = sum(self.measure(c, grid) for c in self.cubes)
        f_l1 = float(np.sum(np.abs(self.f) * mu_t))
        disjoint = _pairwise_disjoint(self.cubes)
        return {
            "reconstruction_error": float(np.max(np.abs(recon - self.f))) / scale,
            "C_g": float(np.max(np.abs(self.g))) / self.alpha,
            "support_ok": bool(support_ok),
            "max_weighted_mean": max(means, default=0.0),
            "C_sigma": total * self.alpha / f_l1 if f_l1 else 0.0,
            "disjoint": disjoint,
            "cubes": len(self.cubes),
        }

    def export(self, grid: Grid) -> str:
        lines = [f"# alpha {self.alpha!r}", "# level ix iy iz side measure mean_abs_f"]
        mu_t = self.weight * grid.weights
        for c in self.cubes:
            idx = c.indices()
            m = float(np.sum(mu_t[idx]))
            lines.append(f"{c.level} {c.corner[0]} {c.corner[1]} {c.corner[2]} {c.side} {m:.10g} "
                         f"{float(np.sum(np.abs(self.f[idx]) * mu_t[idx]) / m):.10g}")
        return "\n".join(lines) + "\n"


def _pairwise_disjoint(cubes) -> bool:
    if not cubes:
        return True
    idx = np.concatenate([c.indices() for c in cubes])
    return bool(np.unique(idx).size == idx.size)


def cz_decompose(grid: Grid, f: np.ndarray, alpha: float, weight: np.ndarray | None = None) -> CZDecomposition:
    """Dyadic stopping time against mu~ = weight * mu at height alpha."""
    if not alpha > 0:
        raise CZError("alpha must be positive")
    weight = np.ones(grid.size) if weight is None else np.asarray(weight, dtype=float)
    if np.any(weight <= 0):
        raise CZError("weight must be strictly positive")
    mu_t = weight * grid.weights
    absf = np.abs(f)
    g = np.array(f, dtype=np.result_type(f, float), copy=True)
    cubes, bad = [], []

    def average(idx):
        return float(np.sum(absf[idx] * mu_t[idx]) / np.sum(mu_t[idx]))

    def select(cube):
        idx = cube.indices()
        mean = np.sum(f[idx] * mu_t[idx]) / np.sum(mu_t[idx])
        b = np.zeros_like(g)
        if idx.size > 1:
            b[idx] = f[idx] - mean
        g[idx] = mean
        cubes.append(cube)
        bad.append(b)

    root = root_cube(grid)
    root_selected = average(root.indices()) > alpha
    if root_selected:
        log.warning("mean of |f| over the root cube exceeds alpha=%g; root selected", alpha)
        select(root)
    else:
        stack = [root]
        while stack:
            q = stack.pop()
            for c in q.children():
                if average(c.indices()) > alpha:
                    select(c)
                elif c.side > 1:
                    stack.append(c)
    return CZDecomposition(alpha, np.asarray(f), g, cubes, bad, weight, root_selected)


# --- tilde transform -------------------------------------------------------------------


def tilde_transform(S: SpectralData, b: np.ndarray, w: np.ndarray, tolerance: float = 1e-8) -> np.ndarray:
    """(-Delta) H^-1 P_c b for b with zero w-weighted mean; its plain mean then vanishes.

    ``b`` may be a single field or a stack of fields in its columns.
    """
    if S.gap_indices.size:
        raise SpectralGapError("tilde transform needs an empty zero band")
    grid = S.grid
    B = np.asarray(b, dtype=float)
    single = B.ndim == 1
    B = B[:, None] if single else B
    mu_w = (w * grid.weights)[:, None]
    wm = np.abs(np.sum(B * mu_w, axis=0))
    scale = np.sum(np.abs(B) * np.abs(mu_w), axis=0)
    bad = wm > tolerance * scale
    if np.any(bad):
        k = int(np.argmax(bad))
        raise CZError(f"<w, b> = {wm[k]:.3e} is not zero; the cancellation cannot hold")
    pos = S.positive_indices
    vp = S.eigenvectors[:, pos]
    coef = vp.T @ (B * grid.weights[:, None])
    out = laplacian_action(grid) @ (vp @ (coef / S.eigenvalues[pos][:, None]))
    return out[:, 0] if single else out


def plain_mean_ratio(grid: Grid, bt: np.ndarray) -> np.ndarray | float:
    """|sum bt mu| / ||bt||_1, per column for stacked input; zero fields give 0."""
    num = np.abs(np.tensordot(grid.weights, bt, axes=(0, 0)))
    den = np.tensordot(grid.weights, np.abs(bt), axes=(0, 0))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def bad_stack(decomp: CZDecomposition) -> np.ndarray:
    """Non-trivial bad parts as columns (single-cell cubes carry b = 0)."""
    cols = [b for b in decomp.bad if np.any(b)]
    return np.column_stack(cols) if cols else np.zeros((decomp.f.size, 0))


# --- atoms -----------------------------------------------------------------------------


class AtomPattern(str, enum.Enum):
    DIPOLE = "dipole"
    RANDOM = "random"


@dataclass
class HardyAtom:
    cube: DyadicCube
    values: np.ndarray

    def check(self, grid: Grid) -> dict:
        idx = self.cube.indices()
        mask = np.ones(grid.size, dtype=bool)
        mask[idx] = False
        mu_b = float(np.sum(grid.weights[idx]))
        return {"support_ok": not np.any(self.values[mask]),
                "sup_ok": float(np.max(np.abs(self.values))) <= (1 + 1e-12) / mu_b,
                "mean": float(np.sum(self.values * grid.weights)),
                "l1": lp_norm(grid, self.values, 1)}


def hardy_atom(grid: Grid, cube: DyadicCube, pattern: AtomPattern = AtomPattern.DIPOLE,
               rng: np.random.Generator | None = None) -> HardyAtom:
    idx = cube.indices()
    if idx.size < 2:
        raise CZError("atoms need a cube of at least two cells")
    mu_b = float(np.sum(grid.weights[idx]))
    vals = np.zeros(grid.size)
    if AtomPattern(pattern) is AtomPattern.DIPOLE:
        order = np.argsort(grid.points[idx, 0], kind="stable")
        half = idx.size // 2
        vals[idx[order[:half]]] = 1.0 / mu_b
        vals[idx[order[half:]]] = -1.0 / mu_b
        if idx.size % 2:
            vals[idx[order[half]]] = 0.0
    else:
        rng = rng or np.random.default_rng(0)
        v = rng.uniform(-1.0, 1.0, idx.size)
        v -= np.sum(v * grid.weights[idx]) / mu_b
        v *= (1.0 / mu_b) / np.max(np.abs(v))
        # close the mean on the largest-weight cell
        k = int(np.argmax(grid.weights[idx]))
        v[k] -= np.sum(v * grid.weights[idx]) / grid.weights[idx][k]
        if abs(v[k]) > 1.0 / mu_b:
            v *= (1.0 / mu_b) / np.max(np.abs(v))
        vals[idx] = v
    return HardyAtom(cube, vals)


@dataclass
class ProbeSet:
    """L1-normalized spikes and Hardy atoms used by the weak-type study."""

    spikes: list = field(default_factory=list)
    atoms: list = field(default_factory=list)


def weak_family(grid: Grid, count: int, seed: int = 0, levels: Sequence[int] = (1, 2, 3)) -> ProbeSet:
    """``count`` spikes and ``count`` atoms per level; larger counts extend smaller ones."""
    rng = np.random.default_rng(seed)
    inner = np.nonzero(grid.inner_mask())[0]
    spike_order = rng.permutation(inner)
    fam = ProbeSet()
    for i in spike_order[:count]:
        f = np.zeros(grid.size)
        f[i] = 1.0 / grid.weights[i]
        fam.spikes.append(f)
    n = root_cube(grid).side
    for lev in levels:
        if n >> lev < 2:
            # atoms need at least two cells per side
            continue
        cubes = cubes_at_level(grid, lev)
        order = rng.permutation(len(cubes))
        for j, ci in enumerate(order[:count]):
            pattern = AtomPattern.DIPOLE if j % 2 == 0 else AtomPattern.RANDOM
            fam.atoms.append(hardy_atom(grid, cubes[ci], pattern, np.random.default_rng(seed * 7919 + j)).values)
    return fam


class _SpectralApply:
    """Batched m(sqrt H) P_c and m(sqrt H) H (-Delta)^-1 on stacked fields."""

    def __init__(self, S: SpectralData, m: MultiplierSymbol):
        pos = S.positive_indices
        self.grid = S.grid
        self.vecs = S.eigenvectors[:, pos]
        self.lam = S.eigenvalues[pos]
        self.m = m.of_sqrt()(self.lam)
        self.newton = newtonian_inverse(S.grid)

    def plain(self, F: np.ndarray) -> np.ndarray:
        return self.vecs @ (self.m[:, None] * (self.vecs.T @ (F * self.grid.weights[:, None])))

    def modified(self, F: np.ndarray) -> np.ndarray:
        G = self.newton.action @ F
        return self.vecs @ ((self.m * self.lam)[:, None] * (self.vecs.T @ (G * self.grid.weights[:, None])))


def _weak_ratios(op: _SpectralApply, fam: ProbeSet) -> dict:
    grid = op.grid
    F = np.column_stack(fam.spikes + fam.atoms)
    out = op.plain(F)
    weak = max(weak_l1_quasinorm(grid, out[:, k]) / lp_norm(grid, F[:, k], 1) for k in range(F.shape[1]))
    A = np.column_stack(fam.atoms)
    mod = op.modified(A)
    hardy = max(lp_norm(grid, mod[:, k], 1) for k in range(A.shape[1]))
    return {"weak11": weak, "hardy_l1": hardy}


def weak11_report(S: SpectralData, m: MultiplierSymbol, count: int = 8, seed: int = 0, s: float = 1.6,
                  drift_tolerance: float = 0.1, check_symbol: bool = True) -> BoundReport:
    """Weak-(1,1), Hardy-to-L1 and kernel-column quasinorms of m(sqrt H), with family doubling."""
    grid = S.grid
    if check_symbol and not m.tabulated:
        hr = hormander_norm(m, s)
        if not hr.hormander:
            raise CZError(f"symbol {m.label} is not Hormander at s={s}: refinement ratio {hr.refinement_ratio:.3f}")
        Ms = hr.M_s
    else:
        Ms = None
    op = _SpectralApply(S, m)
    small = _weak_ratios(op, weak_family(grid, count, seed))
    big = _weak_ratios(op, weak_family(grid, 2 * count, seed))
    inner = np.nonzero(grid.inner_mask())[0]
    cols = 0.0
    for start in range(0, inner.size, 256):
        j = inner[start:start + 256]
        # columns of the kernel are images of L1-normalized spikes
        block = op.vecs @ (op.m[:, None] * op.vecs[j].T)
        cols = max(cols, max(weak_l1_quasinorm(grid, block[:, k]) for k in range(j.size)))
    drift = {k: abs(big[k] / small[k] - 1) for k in small}
    ok = all(d <= drift_tolerance for d in drift.values()) and all(math.isfinite(v) for v in big.values())
    return BoundReport("weak11", ok, measured_constant=big["weak11"], tolerance=drift_tolerance,
                       rows=[{"family": count, **small}, {"family": 2 * count, **big}],
                       metadata={"symbol": m.label, "M_s": Ms, "s": s, "drift": drift, "kernel_columns": cols,
                                 "hardy_l1": big["hardy_l1"]})


def sigma_family_fit(S: SpectralData, sigmas: Sequence[float] = (1.0, 2.0, 4.0), s: float = 1.6,
                     count: int = 8, seed: int = 0, slack: float = 0.3,
                     drift_tolerance: float = 0.1) -> BoundReport:
    """Growth of the weak-type constants of x^{i sigma} against <sigma>.

    Each member's weak11 report must pass its own doubling-drift check too.
    """
    from .multipliers import imaginary_power

    rows, members_ok = [], True
    for sig in sigmas:
        rep = weak11_report(S, imaginary_power(sig), count, seed, s, drift_tolerance)
        members_ok &= rep.verdict
        rows.append({"sigma": sig, "jsigma": math.sqrt(1 + sig**2), "weak11": rep.measured_constant,
                     "hardy_l1": rep.metadata["hardy_l1"], "kernel_columns": rep.metadata["kernel_columns"],
                     "M_s": rep.metadata["M_s"], "max_drift": max(rep.metadata["drift"].values()),
                     "member_ok": rep.verdict})
    js = [r["jsigma"] for r in rows]
    e_weak, _ = fit_loglog(js, [r["weak11"] for r in rows])
    e_hardy, _ = fit_loglog(js, [r["hardy_l1"] for r in rows])
    worst = max(e_weak, e_hardy)
    return BoundReport("sigma_family", worst <= s + slack and members_ok, fitted_slope=worst, expected_slope=s,
                       tolerance=slack, rows=rows,
                       metadata={"exponent_weak11": e_weak, "exponent_hardy": e_hardy, "s": s,
                                 "members_ok": members_ok})


# --- cancellation modulus -----------------------------------------------------------------


def cancellation_modulus(T: OperatorMatrix, separations: Sequence[float], anchors: Sequence[float] | None = None,
                         c: float = 2.0, inner_fraction: float = 0.6) -> list[dict]:
    """sup over pairs (y, y~) with |y - y~| = r of the integral over |x - y| >= c r of |T(x,y) - T(x,y~)|.

    Box grids pair each inner point with its neighbour along the first
    axis.  Radial grids pair shells at the given anchor radii and use the
    shell kernel, the radial analogue of the same quantity.
    """
    grid = T.grid
    out = []
    for r in separations:
        best, where = 0.0, None
        if grid.radial:
            rad = grid.points[:, 0]
            anchors_ = anchors if anchors is not None else [r, 2 * r, 4 * r]
            for a in anchors_:
                j = int(np.argmin(np.abs(rad - a)))
                jt = int(np.argmin(np.abs(rad - (rad[j] + r))))
                if rad[jt] > inner_fraction * grid.extent or jt == j:
                    continue
                sep = abs(rad[jt] - rad[j])
                region = np.abs(rad - rad[j]) >= c * sep
                val = float(np.sum(np.abs(T.kernel[:, j] - T.kernel[:, jt])[region] * grid.weights[region]))
                if val > best:
                    best, where = val, (float(rad[j]), float(rad[jt]))
        else:
            inner = np.nonzero(grid.inner_mask(inner_fraction))[0]
            steps = max(1, int(round(r / grid.h)))
            n = grid.spec.points_per_axis
            for j in inner:
                ix = j // (n * n)
                if ix + steps >= n:
                    continue
                jt = j + steps * n * n
                sep = float(grid.distances([j], [jt])[0, 0])
                d = grid.distances([j])[0]
                region = d >= c * sep
                val = float(np.sum(np.abs(T.kernel[:, j] - T.kernel[:, jt])[region] * grid.weights[region]))
                if val > best:
                    best, where = val, (int(j), int(jt))
        out.append({"separation": float(r), "modulus": best, "pair": where})
    return out


def cancellation_report(S: SpectralData, m: MultiplierSymbol, separations: Sequence[float],
                        spread_limit: float = 2.0, **kw) -> BoundReport:
    """Modulus of m(sqrt H) H (-Delta)^-1 (must be r-stable) beside that of m(sqrt H)."""
    grid = S.grid
    T = kernel_of(S, m.of_sqrt())
    Tmod = kernel_of(S, lambda lam: m.of_sqrt()(lam) * lam).compose(newtonian_inverse(grid))
    mod_rows = cancellation_modulus(Tmod, separations, **kw)
    raw_rows = cancellation_modulus(T, separations, **kw)
    vals = [r["modulus"] for r in mod_rows]
    spread = max(vals) / min(vals)
    rows = [{"separation": a["separation"], "modified": a["modulus"], "unmodified": b["modulus"]}
            for a, b in zip(mod_rows, raw_rows)]
    raw = [r["modulus"] for r in raw_rows]
    return BoundReport("cancellation_modulus", spread <= spread_limit, measured_constant=max(vals),
                       tolerance=spread_limit, rows=rows,
                       metadata={"symbol": m.label, "modified_spread": spread,
                                 "unmodified_spread": max(raw) / min(raw)})
