"""Periodic structured grids on the unit torus T^n = [0,1)^n.

Everything downstream works on dense tensor fields sampled at the nodes
x_i = i/N of a uniform grid with one global periodic chart.  This module
provides the field containers, central finite-difference operators (order
2 or 4, exact periodic wrap), the trapezoid quadrature (spectrally
accurate on smooth periodic integrands), pointwise tensor norms, Lp norms
against a volume density, separable mollifier convolution, and a flat
binary / CSV serialization of fields.

Layout convention: grid axes first (shape (N,)*n), component axes last.
Symmetric rank-2 containers store the n(n+1)/2 independent components in
upper-triangle row-major order; the same packing is used for the lower
index pair of Christoffel-type containers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import KernelTooWide

__all__ = [
    "GridSpec",
    "Field",
    "ScalarField",
    "VectorField",
    "CovectorField",
    "Sym2Field",
    "Christoffel3Field",
    "TensorField",
    "sym_pairs",
    "sym_pack",
    "sym_unpack",
    "partial_derivative",
    "second_partial",
    "integrate",
    "pointwise_norm",
    "lp_norm",
    "convolve",
    "save_field",
    "load_field",
    "field_to_csv",
]

_SYM_PAIRS = {
    2: ((0, 0), (0, 1), (1, 1)),
    3: ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)),
}


def sym_pairs(n: int):
    """Index pairs (i, j), i <= j, backing the packed symmetric storage."""
    return _SYM_PAIRS[n]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [0,1)^n.

    ``spacing * resolution == 1`` must hold exactly in double precision,
    which restricts the admissible resolutions (all powers of two and the
    usual desk-scale sizes qualify).
    """

    dimension: int
    resolution: int
    derivative_order: int = 2

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        if self.resolution < 8 or self.resolution % 2 != 0:
            raise ValueError(f"resolution must be even and >= 8, got {self.resolution}")
        if self.derivative_order not in (2, 4):
            raise ValueError(f"derivative_order must be 2 or 4, got {self.derivative_order}")
        if (1.0 / self.resolution) * self.resolution != 1.0:
            raise ValueError(f"spacing*N != 1 exactly for N={self.resolution}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.dimension

    @property
    def num_points(self) -> int:
        return self.resolution ** self.dimension

    @property
    def sym_size(self) -> int:
        n = self.dimension
        return n * (n + 1) // 2

    def axis_coordinates(self) -> np.ndarray:
        return np.arange(self.resolution) * self.spacing

    def meshes(self):
        """Coordinate arrays x_1..x_n, each of shape ``self.shape``."""
        c = self.axis_coordinates()
        return np.meshgrid(*([c] * self.dimension), indexing="ij")

    def refine(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.dimension, self.resolution * factor, self.derivative_order)


def _check_same_grid(a: "Field", b: "Field"):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


class Field:
    """Dense tensor field over a grid.

    ``variance`` lists the index types ('u' contravariant, 'd' covariant)
    of the *unpacked* component axes; packed symmetric containers expose
    the unpacked view through :meth:`full`.
    """

    variance: tuple = ()
    kind_code = 5

    def __init__(self, grid: GridSpec, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        expected = grid.shape + self.component_shape(grid.dimension)
        if values.shape != expected:
            raise ValueError(f"{type(self).__name__}: expected shape {expected}, got {values.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def component_shape(cls, n: int) -> tuple:
        return (n,) * len(cls.variance)

    @property
    def rank(self) -> int:
        return len(self.variance)

    def full(self) -> np.ndarray:
        """Unpacked component array (grid axes first, one axis per index)."""
        return self.values

    def copy(self):
        return type(self)(self.grid, self.values.copy())

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{type(self).__name__} contains non-finite entries")
        return self

    def component_names(self):
        n = self.grid.dimension
        if self.rank == 0:
            return ["value"]
        idx = np.indices((n,) * self.rank).reshape(self.rank, -1).T
        return ["c" + "".join(str(i + 1) for i in row) for row in idx]


class ScalarField(Field):
    variance = ()
    kind_code = 0

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(*grid.meshes()), dtype=np.float64))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))


class VectorField(Field):
    variance = ("u",)
    kind_code = 1


class CovectorField(Field):
    variance = ("d",)
    kind_code = 2


class TensorField(Field):
    """Fully covariant/contravariant tensor of explicit variance."""

    kind_code = 5

    def __init__(self, grid: GridSpec, values: np.ndarray, variance: tuple):
        self.variance = tuple(variance)
        super().__init__(grid, values)

    def component_shape(self, n: int) -> tuple:  # instance-level: variance set in __init__
        return (n,) * len(self.variance)

    def copy(self):
        return TensorField(self.grid, self.values.copy(), self.variance)


def sym_pack(full: np.ndarray, n: int) -> np.ndarray:
    """Pack the last two (symmetric) axes into n(n+1)/2 components."""
    pairs = sym_pairs(n)
    return np.stack([full[..., i, j] for (i, j) in pairs], axis=-1)


def sym_unpack(packed: np.ndarray, n: int) -> np.ndarray:
    """Expand packed symmetric components back to full (..., n, n)."""
    out = np.empty(packed.shape[:-1] + (n, n), dtype=packed.dtype)
    for k, (i, j) in enumerate(sym_pairs(n)):
        out[..., i, j] = packed[..., k]
        out[..., j, i] = packed[..., k]
    return out


class Sym2Field(Field):
    """Symmetric rank-2 covariant field, packed storage (..., n(n+1)/2)."""

    variance = ("d", "d")
    kind_code = 3

    @classmethod
    def component_shape(cls, n: int) -> tuple:
        return (n * (n + 1) // 2,)

    @classmethod
    def from_matrix(cls, grid: GridSpec, mat: np.ndarray) -> "Sym2Field":
        return cls(grid, sym_pack(np.asarray(mat, dtype=np.float64), grid.dimension))

    @classmethod
    def identity(cls, grid: GridSpec) -> "Sym2Field":
        mat = np.zeros(grid.shape + (grid.dimension,) * 2)
        for i in range(grid.dimension):
            mat[..., i, i] = 1.0
        return cls.from_matrix(grid, mat)

    def matrix(self) -> np.ndarray:
        return sym_unpack(self.values, self.grid.dimension)

    full = matrix

    def component_names(self):
        return ["g%d%d" % (i + 1, j + 1) for (i, j) in sym_pairs(self.grid.dimension)]


class Christoffel3Field(Field):
    """Rank-3 field G^k_{ij}, symmetric in (i,j); storage (..., n, n(n+1)/2)."""

    variance = ("u", "d", "d")
    kind_code = 4

    @classmethod
    def component_shape(cls, n: int) -> tuple:
        return (n, n * (n + 1) // 2)

    @classmethod
    def from_full(cls, grid: GridSpec, full: np.ndarray) -> "Christoffel3Field":
        return cls(grid, sym_pack(np.asarray(full, dtype=np.float64), grid.dimension))

    def full(self) -> np.ndarray:
        return sym_unpack(self.values, self.grid.dimension)

    def component_names(self):
        n = self.grid.dimension
        return ["G%d_%d%d" % (k + 1, i + 1, j + 1) for k in range(n) for (i, j) in sym_pairs(n)]


_KIND_CLASSES = {0: ScalarField, 1: VectorField, 2: CovectorField, 3: Sym2Field, 4: Christoffel3Field}


# ---------------------------------------------------------------------------
# derivatives and quadrature
# ---------------------------------------------------------------------------

def _shift(values: np.ndarray, steps: int, axis: int) -> np.ndarray:
    # np.roll with -steps: result[i] = values[i + steps] with periodic wrap
    return np.roll(values, -steps, axis=axis)


def diff1(values: np.ndarray, axis: int, dx: float, order: int) -> np.ndarray:
    """Central first difference along a grid axis with periodic wrap."""
    if order == 2:
        return (_shift(values, 1, axis) - _shift(values, -1, axis)) / (2.0 * dx)
    return (
        -_shift(values, 2, axis)
        + 8.0 * _shift(values, 1, axis)
        - 8.0 * _shift(values, -1, axis)
        + _shift(values, -2, axis)
    ) / (12.0 * dx)


def _diff2_order4(values: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (
        -_shift(values, 2, axis)
        + 16.0 * _shift(values, 1, axis)
        - 30.0 * values
        + 16.0 * _shift(values, -1, axis)
        - _shift(values, -2, axis)
    ) / (12.0 * dx**2)


def diff2(values: np.ndarray, axis: int, dx: float, order: int) -> np.ndarray:
    """Central second difference along one axis (compact stencil)."""
    if order == 2:
        return (_shift(values, 1, axis) - 2.0 * values + _shift(values, -1, axis)) / dx**2
    return _diff2_order4(values, axis, dx)


def partial_derivative(f: Field, axis: int) -> Field:
    """Periodic central difference of every component along one grid axis.

    Returns a field of the same container type; the stencil order comes
    from the grid spec.
    """
    grid = f.grid
    if not 0 <= axis < grid.dimension:
        raise ValueError(f"axis {axis} out of range for dimension {grid.dimension}")
    dv = diff1(f.values, axis, grid.spacing, grid.derivative_order)
    if isinstance(f, TensorField):
        return TensorField(grid, dv, f.variance)
    return type(f)(grid, dv)


def second_partial(f: Field, axis_a: int, axis_b: int) -> Field:
    """Second difference; compact stencil on the diagonal, composed off it."""
    grid = f.grid
    if axis_a == axis_b:
        dv = diff2(f.values, axis_a, grid.spacing, grid.derivative_order)
        if isinstance(f, TensorField):
            return TensorField(grid, dv, f.variance)
        return type(f)(grid, dv)
    return partial_derivative(partial_derivative(f, axis_a), axis_b)


def integrate(f, density=None, grid: GridSpec | None = None) -> float:
    """Trapezoid quadrature Σ f·density·Δx^n over the periodic grid.

    ``density`` is the volume density against the flat coordinate measure
    (e.g. sqrt(det h)); omitted means the coordinate measure itself.
    """
    if isinstance(f, Field):
        grid = f.grid
        fv = f.values
    else:
        fv = np.asarray(f)
    if grid is None:
        raise ValueError("grid required when integrating a bare array")
    dv = density.values if isinstance(density, Field) else density
    total = np.sum(fv if dv is None else fv * dv)
    return float(total * grid.spacing**grid.dimension)


# ---------------------------------------------------------------------------
# tensor and Lp norms
# ---------------------------------------------------------------------------

_LETTERS = "abcdefgh"


def _contract_index(s: np.ndarray, mat: np.ndarray, pos: int, rank: int) -> np.ndarray:
    letters = _LETTERS[:rank]
    src = "..." + letters[:pos] + "Z" + letters[pos + 1:]
    return np.einsum(f"{src},...Z{letters[pos]}->...{letters}", s, mat)


def pointwise_norm(f: Field, metric_mat: np.ndarray | None = None,
                   metric_inv: np.ndarray | None = None) -> ScalarField:
    """Pointwise tensor norm, indices raised/lowered by the supplied metric.

    ``metric_mat``/``metric_inv`` are full (..., n, n) arrays; both default
    to the identity (flat reference metric).
    """
    grid = f.grid
    full = f.full()
    rank = len(f.variance)
    if rank == 0:
        return ScalarField(grid, np.abs(full))
    flipped = full
    for pos, var in enumerate(f.variance):
        mat = metric_mat if var == "u" else metric_inv
        if mat is not None:
            flipped = _contract_index(flipped, mat, pos, rank)
    letters = _LETTERS[:rank]
    nrm2 = np.einsum(f"...{letters},...{letters}->...", flipped, full)
    return ScalarField(grid, np.sqrt(np.maximum(nrm2, 0.0)))


def lp_norm(f: Field, p: float, density=None, metric_mat=None, metric_inv=None) -> float:
    """(∫ |f|^p dμ)^{1/p} with the pointwise norm taken against a metric.

    ``p = inf`` returns the max of the pointwise norm. The density plays
    the role of dμ/dx (defaults to 1, the flat torus measure).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    nrm = pointwise_norm(f, metric_mat, metric_inv).values
    if np.isinf(p):
        return float(np.max(nrm))
    total = integrate(nrm**p, density, grid=f.grid)
    return float(total ** (1.0 / p))


# ---------------------------------------------------------------------------
# mollifier convolution
# ---------------------------------------------------------------------------

def convolve(f: Field, kernel) -> Field:
    """Componentwise periodic convolution with a separable bump kernel.

    The kernel's 1-D taps sum to one, so constants are preserved to
    round-off and nonnegative scalar data stays nonnegative exactly (the
    update is a convex combination of samples).
    """
    if kernel.delta >= 0.25:
        raise KernelTooWide(f"kernel radius {kernel.delta} >= 1/4")
    out = f.values
    for axis in range(f.grid.dimension):
        out = ndimage.convolve1d(out, kernel.taps, axis=axis, mode="wrap")
    if isinstance(f, TensorField):
        return TensorField(f.grid, out, f.variance)
    return type(f)(f.grid, out)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"TORUSFLD"


def save_field(f: Field, path) -> None:
    """Flat binary container: magic, n, N, valence code, component count,
    then float64 payload in row-major point order, components innermost."""
    ncomp = int(np.prod(f.values.shape[f.grid.dimension:], dtype=np.int64))
    header = _MAGIC + struct.pack(
        "<4I", f.grid.dimension, f.grid.resolution, f.kind_code, ncomp
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype=np.float64).tobytes())


def load_field(path, derivative_order: int = 2) -> Field:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"bad magic in {path!r}")
        n, res, kind, ncomp = struct.unpack("<4I", fh.read(16))
        payload = np.frombuffer(fh.read(), dtype=np.float64)
    grid = GridSpec(n, res, derivative_order)
    cls = _KIND_CLASSES.get(kind)
    if cls is None:
        raise ValueError(f"unknown valence code {kind}")
    shape = grid.shape + cls.component_shape(n)
    return cls(grid, payload.reshape(shape).copy())


def field_to_csv(f: Field, path, max_points: int = 65536) -> None:
    """Point coordinates + components, one grid point per row (small grids)."""
    grid = f.grid
    if grid.num_points > max_points:
        raise ValueError(f"grid too large for CSV ({grid.num_points} points)")
    meshes = grid.meshes()
    names = f.component_names()
    flat = f.values.reshape(grid.num_points, -1)
    with open(path, "w") as fh:
        fh.write("# schema: torusflow.field.v1\n")
        fh.write(",".join([f"x{i+1}" for i in range(grid.dimension)] + names) + "\n")
        coords = np.stack([m.ravel() for m in meshes], axis=1)
        for row_xy, row_c in zip(coords, flat):
            fh.write(",".join(repr(v) for v in row_xy) + ",")
            fh.write(",".join(repr(v) for v in row_c) + "\n")
