"""Probe families for lower-bound operator-norm estimates and ratio studies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid


@dataclass
class ProbeFamily:
    """Labelled fields on one grid; iterating yields ``(label, values)``."""

    grid: Grid
    items: list = field(default_factory=list)
    seed: int | None = None

    def add(self, label: str, values: np.ndarray) -> "ProbeFamily":
        values = np.asarray(values)
        if values.shape != (self.grid.size,):
            raise ValueError(f"probe {label!r} has shape {values.shape}")
        self.items.append((label, values))
        return self

    def extend(self, other: "ProbeFamily") -> "ProbeFamily":
        for label, v in other:
            self.add(label, v)
        return self

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    @property
    def labels(self) -> list[str]:
        return [lab for lab, _ in self.items]


def geometric_scales(lo: float, hi: float, count: int) -> np.ndarray:
    return np.geomspace(lo, hi, count)


def gaussian_probes(grid: Grid, scales, centers=None) -> ProbeFamily:
    """exp(-|x - c|^2 / s^2); radial grids only admit the origin as center."""
    fam = ProbeFamily(grid)
    if grid.radial or centers is None:
        centers = [np.zeros(3)]
    for c in centers:
        c = np.asarray(c, dtype=float)
        if grid.radial:
            r2 = grid.points[:, 0] ** 2
        else:
            r2 = np.sum((grid.points - c[None, :]) ** 2, axis=1)
        for s in scales:
            fam.add(f"gauss(s={s:.4g},c={tuple(np.round(c, 3))})", np.exp(-r2 / s**2))
    return fam


def shell_probes(grid: Grid, radii, width: float) -> ProbeFamily:
    """Smooth radial shells centred at the given radii."""
    fam = ProbeFamily(grid)
    r = grid.radius
    for r0 in radii:
        fam.add(f"shell(r={r0:.4g})", np.exp(-((r - r0) ** 2) / width**2))
    return fam


def spike_probes(grid: Grid, indices) -> ProbeFamily:
    """L1-normalized single-cell spikes."""
    fam = ProbeFamily(grid)
    for i in indices:
        f = np.zeros(grid.size)
        f[i] = 1.0 / grid.weights[i]
        fam.add(f"spike({i})", f)
    return fam


def random_sign_probes(grid: Grid, pieces: list[np.ndarray], count: int, seed: int = 0) -> ProbeFamily:
    """Random +/- combinations of the given fields (e.g. Paley-Wiener pieces)."""
    rng = np.random.default_rng(seed)
    fam = ProbeFamily(grid, seed=seed)
    P = np.array(pieces)
    for j in range(count):
        signs = rng.choice([-1.0, 1.0], size=len(pieces))
        fam.add(f"randsign({seed},{j})", signs @ P)
    return fam


def smooth_family(grid: Grid, count: int = 5) -> ProbeFamily:
    """Gaussians of width 0.1 to 1 and thin shells at radii 1 to 3."""
    fam = gaussian_probes(grid, geometric_scales(0.1, 1.0, count))
    return fam.extend(shell_probes(grid, np.linspace(1.0, 3.0, max(count - 2, 2)), 0.2))


def square_function_family(grid: Grid, count: int = 4) -> ProbeFamily:
    """Gaussians of width 0.1 to 2 and shells at radii 1 to 5; larger ``count`` refines both ranges."""
    fam = gaussian_probes(grid, geometric_scales(0.1, 2.0, count))
    return fam.extend(shell_probes(grid, np.linspace(1.0, 5.0, count), 0.2))


def wave_data_pairs(grid: Grid, widths=(0.5, 1.0, 2.0)) -> list[tuple[np.ndarray, np.ndarray]]:
    """(u0, u1) pairs: Gaussian displacement at rest, then Gaussian velocity from zero."""
    zero = np.zeros(grid.size)
    bumps = [np.exp(-grid.radius**2 / w**2) for w in widths]
    return [(b, zero) for b in bumps] + [(zero, b) for b in bumps]
