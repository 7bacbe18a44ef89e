"""Discretizations of R^3: radial sector and Dirichlet box.

Fields are plain numpy arrays of length ``grid.size``; every measure-aware
functional takes the grid alongside the values.  Operators are stored as
integral kernels against the grid measure, ``(A f)_i = sum_j A[i, j] f_j mu_j``.

Radial mode represents only spherically symmetric data: point ``i`` stands
for the shell of radius ``r_i`` and the weight ``mu_i`` is the shell volume.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

INF = math.inf


class GridMode(str, enum.Enum):
    RADIAL = "radial"
    BOX3D = "box"


class GridError(ValueError):
    pass


class PotentialFileError(ValueError):
    """Raised for unreadable or malformed potential files."""


@dataclass(frozen=True)
class GridSpec:
    mode: GridMode
    extent: float
    points_per_axis: int

    def __post_init__(self):
        object.__setattr__(self, "mode", GridMode(self.mode))
        if not self.extent > 0:
            raise GridError(f"extent must be positive, got {self.extent}")
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 2:
            raise GridError(f"points_per_axis must be an integer >= 2, got {self.points_per_axis}")

    @property
    def spacing(self) -> float:
        if self.mode is GridMode.RADIAL:
            return self.extent / self.points_per_axis
        return 2.0 * self.extent / self.points_per_axis

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "extent": self.extent, "points_per_axis": self.points_per_axis}


@dataclass(frozen=True, eq=False)
class Grid:
    """Point locations and measure weights.

    ``points`` has shape (n, 1) in radial mode (the radii) and (n, 3) in box
    mode.  Box points are ordered with the x index slowest.
    """

    spec: GridSpec
    points: np.ndarray
    weights: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def mode(self) -> GridMode:
        return self.spec.mode

    @property
    def radial(self) -> bool:
        return self.spec.mode is GridMode.RADIAL

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def h(self) -> float:
        return self.spec.spacing

    @property
    def extent(self) -> float:
        return self.spec.extent

    @property
    def radius(self) -> np.ndarray:
        """Distance of each point from the origin."""
        if self.radial:
            return self.points[:, 0]
        return np.linalg.norm(self.points, axis=1)

    @property
    def shape(self) -> tuple[int, ...]:
        n = self.spec.points_per_axis
        return (n,) if self.radial else (n, n, n)

    def inner_mask(self, fraction: float = 0.6) -> np.ndarray:
        """Points inside the inner ``fraction`` of the domain.

        Box mode uses the sup-norm cube ``|x|_inf <= fraction * R``.
        """
        if self.radial:
            return self.points[:, 0] <= fraction * self.extent
        return np.max(np.abs(self.points), axis=1) <= fraction * self.extent

    def boundary_distance(self) -> np.ndarray:
        if self.radial:
            return self.extent - self.points[:, 0]
        return self.extent - np.max(np.abs(self.points), axis=1)

    def volume(self) -> float:
        if self.radial:
            return 4.0 / 3.0 * math.pi * self.extent**3
        return (2.0 * self.extent) ** 3

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """Weighted inner product <f, g>_mu = sum f_i conj(g_i) mu_i."""
        return np.sum(f * np.conj(g) * self.weights)

    def fingerprint(self) -> str:
        h = hashlib.sha256(repr(self.spec.to_dict()).encode())
        return h.hexdigest()[:16]

    def index(self, ix: int, iy: int, iz: int) -> int:
        n = self.spec.points_per_axis
        return (ix * n + iy) * n + iz

    def nearest(self, x) -> int:
        """Index of the grid point closest to location ``x`` (a radius in radial mode)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return int(np.argmin(np.sum((self.points - x[None, :]) ** 2, axis=1)))

    def distances(self, rows=None, cols=None) -> np.ndarray:
        """Pairwise |x_i - x_j| (box) or |r_i - r_j| (radial) for the given index sets."""
        a = self.points if rows is None else self.points[rows]
        b = self.points if cols is None else self.points[cols]
        d2 = np.zeros((a.shape[0], b.shape[0]))
        for k in range(a.shape[1]):
            d2 += (a[:, k, None] - b[None, :, k]) ** 2
        return np.sqrt(d2)


def build_grid(spec: GridSpec) -> Grid:
    n = spec.points_per_axis
    h = spec.spacing
    if spec.mode is GridMode.RADIAL:
        r = (np.arange(n) + 0.5) * h
        points = r[:, None]
        weights = 4.0 * math.pi * r**2 * h
    else:
        x = -spec.extent + (np.arange(n) + 0.5) * h
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        points = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        weights = np.full(n**3, h**3)
    points.setflags(write=False)
    weights.setflags(write=False)
    return Grid(spec=spec, points=points, weights=weights)


def radial_grid(extent: float, n: int) -> Grid:
    return build_grid(GridSpec(GridMode.RADIAL, extent, n))


def box_grid(extent: float, n: int) -> Grid:
    return build_grid(GridSpec(GridMode.BOX3D, extent, n))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense integral kernel against the grid measure."""

    grid: Grid
    kernel: np.ndarray

    def __post_init__(self):
        n = self.grid.size
        if self.kernel.shape != (n, n):
            raise ValueError(f"kernel shape {self.kernel.shape} does not match grid size {n}")

    @classmethod
    def from_action(cls, grid: Grid, action: np.ndarray) -> "OperatorMatrix":
        return cls(grid, action / grid.weights[None, :])

    @property
    def action(self) -> np.ndarray:
        """Plain matrix acting on value vectors."""
        return self.kernel * self.grid.weights[None, :]

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.kernel @ (f * self.grid.weights)

    def compose(self, other: "OperatorMatrix") -> "OperatorMatrix":
        """Kernel of ``self @ other``."""
        return OperatorMatrix(self.grid, (self.kernel * self.grid.weights[None, :]) @ other.kernel)

    def adjoint(self) -> "OperatorMatrix":
        return OperatorMatrix(self.grid, self.kernel.conj().T)

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.grid, self.kernel + other.kernel)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.grid, self.kernel - other.kernel)

    def __mul__(self, c) -> "OperatorMatrix":
        return OperatorMatrix(self.grid, self.kernel * c)

    __rmul__ = __mul__

    def identity_like(self) -> "OperatorMatrix":
        return identity_operator(self.grid)


def identity_operator(grid: Grid) -> OperatorMatrix:
    return OperatorMatrix(grid, np.diag(1.0 / grid.weights))


def _dirichlet_1d(n: int) -> sparse.csr_matrix:
    # cell-centred points with odd reflection at both walls
    main = np.full(n, 2.0)
    main[0] = main[-1] = 3.0
    off = -np.ones(n - 1)
    return sparse.diags([off, main, off], [-1, 0, 1], format="csr")


def laplacian_action(grid: Grid) -> np.ndarray:
    """Plain matrix of -Delta acting on value vectors (Dirichlet)."""
    n = grid.spec.points_per_axis
    h = grid.h
    if "laplacian_action" in grid._cache:
        return grid._cache["laplacian_action"]
    if grid.radial:
        r = grid.points[:, 0]
        a = _dirichlet_1d(n).toarray() / h**2
        act = a * (r[None, :] / r[:, None])
    else:
        d = _dirichlet_1d(n)
        eye = sparse.identity(n, format="csr")
        lap = (
            sparse.kron(sparse.kron(d, eye), eye)
            + sparse.kron(sparse.kron(eye, d), eye)
            + sparse.kron(sparse.kron(eye, eye), d)
        )
        act = lap.toarray() / h**2
    act.setflags(write=False)
    grid._cache["laplacian_action"] = act
    return act


def build_laplacian(grid: Grid) -> OperatorMatrix:
    """-Delta with homogeneous Dirichlet walls, as a kernel.

    Radial mode acts on ``u = r f`` with the 3-point stencil, which makes the
    kernel exactly symmetric.
    """
    act = laplacian_action(grid)
    if grid.radial:
        r = grid.points[:, 0]
        n = grid.spec.points_per_axis
        a = _dirichlet_1d(n).toarray() / grid.h**2
        kernel = a / (r[:, None] * r[None, :]) / (4.0 * math.pi * grid.h)
    else:
        kernel = act / grid.h**3
    return OperatorMatrix(grid, kernel)


def dirichlet_eigenvalues_1d(n: int, length: float) -> np.ndarray:
    """Closed-form eigenvalues of the cell-centred 3-point Dirichlet stencil on [0, length]."""
    h = length / n
    k = np.arange(1, n + 1)
    return (2.0 / h**2) * (1.0 - np.cos(k * math.pi * h / length))


# --- potentials -------------------------------------------------------------


class PotentialKind(str, enum.Enum):
    ZERO = "zero"
    GAUSSIAN_WELL = "gaussian"
    YUKAWA = "yukawa"
    COMPACT_BUMP = "bump"
    FROM_FILE = "file"
    SUM = "sum"


@dataclass(frozen=True)
class PotentialSpec:
    """Potential description.

    ``gaussian``: ``-A exp(-|x - c|^2 / sigma^2)``; ``yukawa``: ``-A exp(-m|x|)/|x|``;
    ``bump``: ``A * 1{|x - c| <= rho}``; ``sum`` adds its ``parts``.
    ``center`` is only meaningful in box mode.
    """

    kind: PotentialKind = PotentialKind.ZERO
    amplitude: float = 0.0
    width: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    path: str | None = None
    parts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", PotentialKind(self.kind))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "parts", tuple(self.parts))

    @classmethod
    def zero(cls):
        return cls(PotentialKind.ZERO)

    @classmethod
    def gaussian(cls, amplitude, sigma=1.0, center=(0.0, 0.0, 0.0)):
        return cls(PotentialKind.GAUSSIAN_WELL, amplitude, sigma, center)

    @classmethod
    def yukawa(cls, amplitude, mass=1.0):
        return cls(PotentialKind.YUKAWA, amplitude, mass)

    @classmethod
    def bump(cls, amplitude, radius=1.0, center=(0.0, 0.0, 0.0)):
        return cls(PotentialKind.COMPACT_BUMP, amplitude, radius, center)

    @classmethod
    def from_file(cls, path):
        return cls(PotentialKind.FROM_FILE, path=str(path))

    @classmethod
    def sum(cls, *parts):
        return cls(PotentialKind.SUM, parts=tuple(parts))

    @classmethod
    def parse(cls, text: str) -> "PotentialSpec":
        """Parse CLI shorthand such as ``zero``, ``gaussian:8,1``, ``bump:-1,1``,
        ``yukawa:2,1``, ``file:path``; ``+`` joins terms."""
        text = text.strip()
        if "+" in text and not text.startswith("file:"):
            return cls.sum(*(cls.parse(t) for t in text.split("+")))
        name, _, args = text.partition(":")
        name = name.strip().lower()
        if name == "zero":
            return cls.zero()
        if name == "file":
            return cls.from_file(args)
        try:
            vals = [float(a) for a in args.split(",") if a.strip()]
        except ValueError as exc:
            raise ValueError(f"bad potential parameters in {text!r}") from exc
        center = tuple(vals[2:5]) if len(vals) >= 5 else (0.0, 0.0, 0.0)
        if name in ("gaussian", "gauss"):
            return cls.gaussian(vals[0], vals[1] if len(vals) > 1 else 1.0, center)
        if name == "yukawa":
            return cls.yukawa(vals[0], vals[1] if len(vals) > 1 else 1.0)
        if name == "bump":
            return cls.bump(vals[0], vals[1] if len(vals) > 1 else 1.0, center)
        raise ValueError(f"unknown potential kind {name!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        if self.kind is PotentialKind.FROM_FILE:
            d["path"] = self.path
        elif self.kind is PotentialKind.SUM:
            d["parts"] = [p.to_dict() for p in self.parts]
        elif self.kind is not PotentialKind.ZERO:
            d.update(amplitude=self.amplitude, width=self.width, center=list(self.center))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        kind = PotentialKind(d.get("kind", "zero"))
        if kind is PotentialKind.SUM:
            return cls.sum(*(cls.from_dict(p) for p in d["parts"]))
        if kind is PotentialKind.FROM_FILE:
            return cls.from_file(d["path"])
        return cls(kind, float(d.get("amplitude", 0.0)), float(d.get("width", 1.0)),
                   tuple(d.get("center", (0.0, 0.0, 0.0))))


def _shifted_radius(grid: Grid, center) -> np.ndarray:
    if grid.radial:
        return grid.points[:, 0]
    return np.linalg.norm(grid.points - np.asarray(center)[None, :], axis=1)


def sample_potential(grid: Grid, pot: PotentialSpec) -> np.ndarray:
    kind = pot.kind
    if kind is PotentialKind.ZERO:
        return np.zeros(grid.size)
    if kind is PotentialKind.SUM:
        return sum((sample_potential(grid, p) for p in pot.parts), np.zeros(grid.size))
    if kind is PotentialKind.FROM_FILE:
        return read_potential_file(grid, pot.path)
    r = _shifted_radius(grid, pot.center)
    if kind is PotentialKind.GAUSSIAN_WELL:
        return -pot.amplitude * np.exp(-(r**2) / pot.width**2)
    if kind is PotentialKind.YUKAWA:
        return -pot.amplitude * np.exp(-pot.width * r) / r
    if kind is PotentialKind.COMPACT_BUMP:
        return np.where(r <= pot.width, pot.amplitude, 0.0)
    raise ValueError(f"unsupported potential kind {kind}")


def read_potential_file(grid: Grid, path) -> np.ndarray:
    """Read ``r value`` (radial) or ``ix iy iz value`` (box) records.

    Radial records are assigned to the cell containing ``r``.  Missing
    entries are zero.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise PotentialFileError(f"cannot read potential file {path}: {exc}") from exc
    values = np.zeros(grid.size)
    n = grid.spec.points_per_axis
    expected = 2 if grid.radial else 4
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != expected:
            raise PotentialFileError(
                f"{path}:{lineno}: expected {expected} fields, got {len(toks)}: {raw!r}")
        try:
            if grid.radial:
                r, v = float(toks[0]), float(toks[1])
                idx = int(math.floor(r / grid.h))
                if not 0 <= idx < n or r < 0:
                    raise PotentialFileError(f"{path}:{lineno}: radius {r} outside [0, {grid.extent})")
            else:
                ix, iy, iz = (int(t) for t in toks[:3])
                v = float(toks[3])
                if not all(0 <= i < n for i in (ix, iy, iz)):
                    raise PotentialFileError(f"{path}:{lineno}: index out of range: {raw!r}")
                idx = grid.index(ix, iy, iz)
        except ValueError as exc:
            if isinstance(exc, PotentialFileError):
                raise
            raise PotentialFileError(f"{path}:{lineno}: malformed record {raw!r}") from exc
        if not math.isfinite(v):
            raise PotentialFileError(f"{path}:{lineno}: non-finite value {raw!r}")
        values[idx] = v
    return values


def write_potential_file(grid: Grid, values: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# potential on {grid.mode.value} grid, R={grid.extent}, N={grid.spec.points_per_axis}\n")
        if grid.radial:
            for r, v in zip(grid.points[:, 0], values):
                fh.write(f"{r:.17g} {v:.17g}\n")
        else:
            n = grid.spec.points_per_axis
            for idx, v in enumerate(values):
                if v != 0.0:
                    ix, rem = divmod(idx, n * n)
                    iy, iz = divmod(rem, n)
                    fh.write(f"{ix} {iy} {iz} {v:.17g}\n")


# --- norms ------------------------------------------------------------------


def self_cell_kernel(weights: np.ndarray) -> np.ndarray:
    """Average of 1/|x| over a ball with the cell's volume: (3/2)/r_cell."""
    r_cell = (3.0 * weights / (4.0 * math.pi)) ** (1.0 / 3.0)
    return 1.5 / r_cell


def inverse_distance(grid: Grid, rows=None, cols=None) -> np.ndarray:
    """Newtonian kernel 1/|x - y| with the self-cell regularization.

    Radial mode returns the shell average 1/max(r, r'), which has no
    singularity.
    """
    ri = np.arange(grid.size) if rows is None else np.asarray(rows)
    ci = np.arange(grid.size) if cols is None else np.asarray(cols)
    if grid.radial:
        r = grid.points[:, 0]
        return 1.0 / np.maximum(r[ri, None], r[None, ci])
    d = grid.distances(ri, ci)
    same = ri[:, None] == ci[None, :]
    with np.errstate(divide="ignore"):
        k = 1.0 / d
    if same.any():
        sc = self_cell_kernel(grid.weights)
        k[same] = np.broadcast_to(sc[ri][:, None], same.shape)[same]
    return k


def kato_norm(grid: Grid, V: np.ndarray, return_argmax: bool = False):
    """sup_y sum_i |V_i| mu_i / |x_i - y| over grid points y."""
    a = np.abs(V) * grid.weights
    if not a.any():
        return (0.0, 0) if return_argmax else 0.0
    best, arg = -1.0, 0
    chunk = max(1, 4_000_000 // grid.size)
    support = np.nonzero(a)[0]
    for start in range(0, grid.size, chunk):
        ys = np.arange(start, min(grid.size, start + chunk))
        vals = inverse_distance(grid, ys, support) @ a[support]
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, arg = float(vals[k]), int(ys[k])
    return (best, arg) if return_argmax else best


def lp_norm(grid: Grid, f: np.ndarray, p: float) -> float:
    if p == INF:
        return float(np.max(np.abs(f))) if f.size else 0.0
    if not p >= 1:
        raise ValueError(f"exponent must satisfy p >= 1 or p = inf, got {p}")
    return float(np.sum(np.abs(f) ** p * grid.weights) ** (1.0 / p))


def weak_l1_quasinorm(grid: Grid, f: np.ndarray) -> float:
    """sup_alpha alpha * mu{|f| > alpha}, i.e. max_k a_k * mu{|f| >= a_k}."""
    a = np.abs(np.asarray(f))
    order = np.argsort(-a, kind="stable")
    a_sorted = a[order]
    mass = np.cumsum(grid.weights[order])
    # with ties, mu{|f| >= a_k} includes every entry equal to a_k
    last = np.searchsorted(-a_sorted, -a_sorted, side="right") - 1
    vals = a_sorted * mass[last]
    return float(vals.max()) if vals.size else 0.0


class NewtonMode(str, enum.Enum):
    MATRIX_INVERSE = "matrix"
    CONTINUUM_KERNEL = "continuum"


def newtonian_inverse(grid: Grid, mode: NewtonMode = NewtonMode.MATRIX_INVERSE) -> OperatorMatrix:
    mode = NewtonMode(mode)
    if mode is NewtonMode.CONTINUUM_KERNEL:
        return OperatorMatrix(grid, inverse_distance(grid) / (4.0 * math.pi))
    key = "newton_matrix"
    if key not in grid._cache:
        act = laplacian_action(grid)
        try:
            inv = np.linalg.inv(act)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("Dirichlet Laplacian is singular; grid is corrupt") from exc
        grid._cache[key] = OperatorMatrix.from_action(grid, inv)
    return grid._cache[key]
