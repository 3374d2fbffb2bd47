"""Tensor calculus against a smooth background metric on the torus.

The central object is the weak scalar-curvature functional of a continuous
W^{1,p} metric g measured against a smooth background h: first covariant
derivatives of g assemble a difference-Christoffel tensor, a vector field
V and a scalar field F such that, for smooth g,

    R_g = div_h V + F          (pointwise),

so the pairing

    <R_g, phi> = Int ( -V . grad(phi * dmu_g/dmu_h) + F * phi * dmu_g/dmu_h ) dmu_h

equals Int R_g phi dmu_g classically, while only first derivatives of g
ever enter.  The derivative in the V-term falls on the product
phi * dmu_g/dmu_h as a whole (no product rule), which is what keeps the
functional meaningful for merely W^{1,p} metrics.

Index conventions used throughout: derivative index first in covariant
derivative arrays (Dg[k,i,j] = nabla_k g_ij), Christoffel arrays are
G[k,i,j] = Gamma^k_ij, and the traced Christoffel is Gamma^j_{ji}.
The contraction `(nabla_k g^{ik}) Gamma^j_{ji}` in F uses the traced
Christoffel; with that reading the divergence identity above is exact
(checked symbolically and enforced by the classical-consistency tests).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
import sympy as sp

from .errors import SingularMetric
from .grid import (
    Christoffel3Field,
    Field,
    GridSpec,
    ScalarField,
    Sym2Field,
    TensorField,
    VectorField,
    diff1,
    diff2,
    integrate,
    pointwise_norm,
)

__all__ = [
    "BackgroundMetric",
    "MetricField",
    "PairingReport",
    "CurvatureTensors",
    "covariant_metric_derivative",
    "second_covariant_metric_derivative",
    "difference_christoffel",
    "deturck_field_W",
    "pairing_vector_V",
    "scalar_F",
    "distributional_pairing",
    "classical_curvature",
    "covariant_derivative",
    "tensor_norm",
    "sym_eig_range",
    "pencil_eig_range",
]

COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# pointwise linear algebra for symmetric 2x2 / 3x3 (closed forms, no LAPACK)
# ---------------------------------------------------------------------------

def _det_sym(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[-1]
    if n == 2:
        return mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] ** 2
    a, b, c = mat[..., 0, 0], mat[..., 0, 1], mat[..., 0, 2]
    d, e, f = mat[..., 1, 1], mat[..., 1, 2], mat[..., 2, 2]
    return a * (d * f - e**2) - b * (b * f - e * c) + c * (b * e - d * c)


def _inv_sym(mat: np.ndarray, det: np.ndarray) -> np.ndarray:
    """Cofactor inverse of a symmetric matrix field, n <= 3."""
    n = mat.shape[-1]
    out = np.empty_like(mat)
    if n == 2:
        out[..., 0, 0] = mat[..., 1, 1]
        out[..., 1, 1] = mat[..., 0, 0]
        out[..., 0, 1] = out[..., 1, 0] = -mat[..., 0, 1]
        return out / det[..., None, None]
    a, b, c = mat[..., 0, 0], mat[..., 0, 1], mat[..., 0, 2]
    d, e, f = mat[..., 1, 1], mat[..., 1, 2], mat[..., 2, 2]
    out[..., 0, 0] = d * f - e**2
    out[..., 0, 1] = out[..., 1, 0] = c * e - b * f
    out[..., 0, 2] = out[..., 2, 0] = b * e - c * d
    out[..., 1, 1] = a * f - c**2
    out[..., 1, 2] = out[..., 2, 1] = b * c - a * e
    out[..., 2, 2] = a * d - b**2
    return out / det[..., None, None]


def _real_cubic_roots(b, c, d):
    """All-real roots of x^3 + b x^2 + c x + d (trigonometric form)."""
    p = c - b**2 / 3.0
    q = 2.0 * b**3 / 27.0 - b * c / 3.0 + d
    s = np.sqrt(np.maximum(-p / 3.0, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.where(s > 0, 3.0 * q / (2.0 * p * np.where(s > 0, s, 1.0)), 0.0)
    phi = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
    shift = -b / 3.0
    r1 = shift + 2.0 * s * np.cos(phi)
    r2 = shift + 2.0 * s * np.cos(phi - 2.0 * np.pi / 3.0)
    r3 = shift + 2.0 * s * np.cos(phi - 4.0 * np.pi / 3.0)
    return r1, r2, r3


def sym_eig_range(mat: np.ndarray):
    """(min, max) eigenvalue fields of a symmetric 2x2 / 3x3 matrix field."""
    n = mat.shape[-1]
    if n == 2:
        half_tr = 0.5 * (mat[..., 0, 0] + mat[..., 1, 1])
        disc = np.sqrt(0.25 * (mat[..., 0, 0] - mat[..., 1, 1]) ** 2 + mat[..., 0, 1] ** 2)
        return half_tr - disc, half_tr + disc
    tr = mat[..., 0, 0] + mat[..., 1, 1] + mat[..., 2, 2]
    tr2 = np.einsum("...ij,...ji->...", mat, mat)
    i2 = 0.5 * (tr**2 - tr2)
    i3 = _det_sym(mat)
    r1, r2, r3 = _real_cubic_roots(-tr, i2, -i3)
    roots = np.stack([r1, r2, r3], axis=-1)
    return roots.min(axis=-1), roots.max(axis=-1)


def pencil_eig_range(g_mat: np.ndarray, h_mat: np.ndarray, h_inv: np.ndarray):
    """(min, max) generalized eigenvalues of g against h (roots of det(g - t h))."""
    b_mat = np.einsum("...ik,...kj->...ij", h_inv, g_mat)
    n = g_mat.shape[-1]
    if n == 2:
        tr = b_mat[..., 0, 0] + b_mat[..., 1, 1]
        det = b_mat[..., 0, 0] * b_mat[..., 1, 1] - b_mat[..., 0, 1] * b_mat[..., 1, 0]
        disc = np.sqrt(np.maximum(0.25 * tr**2 - det, 0.0))
        return 0.5 * tr - disc, 0.5 * tr + disc
    tr = np.einsum("...ii->...", b_mat)
    tr2 = np.einsum("...ij,...ji->...", b_mat, b_mat)
    i2 = 0.5 * (tr**2 - tr2)
    i3 = (
        b_mat[..., 0, 0] * (b_mat[..., 1, 1] * b_mat[..., 2, 2] - b_mat[..., 1, 2] * b_mat[..., 2, 1])
        - b_mat[..., 0, 1] * (b_mat[..., 1, 0] * b_mat[..., 2, 2] - b_mat[..., 1, 2] * b_mat[..., 2, 0])
        + b_mat[..., 0, 2] * (b_mat[..., 1, 0] * b_mat[..., 2, 1] - b_mat[..., 1, 1] * b_mat[..., 2, 0])
    )
    r1, r2, r3 = _real_cubic_roots(-tr, i2, -i3)
    roots = np.stack([r1, r2, r3], axis=-1)
    return roots.min(axis=-1), roots.max(axis=-1)


# ---------------------------------------------------------------------------
# metric containers
# ---------------------------------------------------------------------------

class MetricField:
    """Grid of symmetric positive-definite matrices (the evolving metric).

    Positive definiteness and the condition-number guard are enforced the
    first time the pointwise inverse is requested.
    """

    def __init__(self, g: Sym2Field, name: str = "g"):
        self.grid = g.grid
        self.g = g
        self.name = name
        self._mat = None
        self._inv = None
        self._det = None
        self._eig = None

    # -- constructors -------------------------------------------------
    @classmethod
    def from_matrix(cls, grid: GridSpec, mat: np.ndarray, name: str = "g") -> "MetricField":
        return cls(Sym2Field.from_matrix(grid, mat), name)

    @classmethod
    def flat(cls, grid: GridSpec, scale: float = 1.0, name: str = "flat") -> "MetricField":
        mat = np.zeros(grid.shape + (grid.dimension,) * 2)
        for i in range(grid.dimension):
            mat[..., i, i] = scale
        return cls.from_matrix(grid, mat, name)

    @classmethod
    def conformal_flat(cls, grid: GridSpec, u, name: str = "conformal") -> "MetricField":
        """g = exp(2u) * delta for a scalar field or callable u."""
        uv = u.values if isinstance(u, Field) else (
            np.asarray(u(*grid.meshes()), dtype=float) if callable(u) else np.asarray(u, dtype=float)
        )
        mat = np.zeros(grid.shape + (grid.dimension,) * 2)
        conf = np.exp(2.0 * uv)
        for i in range(grid.dimension):
            mat[..., i, i] = conf
        return cls.from_matrix(grid, mat, name)

    # -- pointwise algebra ---------------------------------------------
    def matrix(self) -> np.ndarray:
        if self._mat is None:
            self._mat = self.g.matrix()
        return self._mat

    def det(self) -> np.ndarray:
        if self._det is None:
            self._det = _det_sym(self.matrix())
        return self._det

    def eig_range(self):
        if self._eig is None:
            lo, hi = sym_eig_range(self.matrix())
            self._eig = (lo, hi)
        return self._eig

    @property
    def ellipticity(self):
        """(lambda_g, Lambda_g): extreme eigenvalue bounds over the grid."""
        lo, hi = self.eig_range()
        return float(lo.min()), float(hi.max())

    def inverse(self) -> np.ndarray:
        if self._inv is None:
            lo, hi = self.eig_range()
            lam, Lam = float(lo.min()), float(hi.max())
            if lam <= 0.0:
                raise SingularMetric(f"{self.name}: not positive definite (min eig {lam:.3e})")
            if Lam / lam > COND_LIMIT:
                raise SingularMetric(f"{self.name}: condition number {Lam/lam:.3e} above {COND_LIMIT:.0e}")
            self._inv = _inv_sym(self.matrix(), self.det())
        return self._inv

    def sqrt_det(self) -> np.ndarray:
        det = self.det()
        if np.any(det <= 0.0):
            raise SingularMetric(f"{self.name}: nonpositive determinant")
        return np.sqrt(det)

    def fairness_epsilon(self, bg: "BackgroundMetric") -> float:
        """Smallest eps with (1+eps)^-1 h <= g <= (1+eps) h over the grid."""
        lo, hi = pencil_eig_range(self.matrix(), bg.matrix(), bg.inverse())
        lam = float(lo.min())
        if lam <= 0.0:
            return float("inf")
        return float(max(hi.max() - 1.0, 1.0 / lam - 1.0))

    def copy(self, name: str | None = None) -> "MetricField":
        return MetricField(self.g.copy(), name or self.name)


class BackgroundMetric:
    """Smooth reference metric h with analytic connection data.

    Carries the sampled metric, its Christoffel symbols, Ricci and lowered
    Riemann tensors (all evaluated from a symbolic expression, exactly zero
    for the flat default), and the measured derivative bounds
    k_j = sup |nabla^j Rm(h)| for j <= 3.
    """

    def __init__(self, grid: GridSpec, h: Sym2Field, christoffel: Christoffel3Field,
                 ricci: Sym2Field, riemann: np.ndarray, name: str = "h",
                 expr: sp.Matrix | None = None, is_flat: bool = False):
        self.grid = grid
        self.h = h
        self.christoffel_tilde = christoffel
        self.ricci_tilde = ricci
        self.riemann_tilde = riemann  # full (..., n, n, n, n), lowered
        self.name = name
        self.expr = expr
        self.is_flat = is_flat
        self._mat = None
        self._inv = None
        self._sqrt_det = None
        self._kj = None
        lo, _ = sym_eig_range(h.matrix())
        if float(lo.min()) <= 0.0:
            raise SingularMetric(f"background {name} is not positive definite")

    # -- constructors -------------------------------------------------
    @classmethod
    def flat(cls, grid: GridSpec, name: str = "flat") -> "BackgroundMetric":
        n = grid.dimension
        h = Sym2Field.identity(grid)
        chris = Christoffel3Field(grid, np.zeros(grid.shape + (n, grid.sym_size)))
        ricci = Sym2Field(grid, np.zeros(grid.shape + (grid.sym_size,)))
        riemann = np.zeros(grid.shape + (n,) * 4)
        bg = cls(grid, h, chris, ricci, riemann, name, expr=sp.eye(n), is_flat=True)
        bg._kj = [0.0, 0.0, 0.0, 0.0]
        return bg

    @classmethod
    def from_expression(cls, grid: GridSpec, h_expr: sp.Matrix, name: str = "h") -> "BackgroundMetric":
        """Sample an analytic metric (sympy matrix in x1..xn) and its exact
        Christoffel / Ricci / Riemann tensors on the grid."""
        n = grid.dimension
        xs = sp.symbols(f"x1:{n + 1}")
        h_expr = sp.Matrix(h_expr)
        hi_expr = h_expr.inv()

        def d(f, k):
            return sp.diff(f, xs[k])

        gam = [[[sum(sp.Rational(1, 2) * hi_expr[k, l] * (d(h_expr[i, l], j) + d(h_expr[j, l], i) - d(h_expr[i, j], l))
                     for l in range(n))
                 for j in range(n)] for i in range(n)] for k in range(n)]
        ric = [[sum(d(gam[k][i][j], k) for k in range(n))
                - sum(d(gam[k][k][j], i) for k in range(n))
                + sum(gam[k][k][l] * gam[l][i][j] for k in range(n) for l in range(n))
                - sum(gam[k][i][l] * gam[l][k][j] for k in range(n) for l in range(n))
                for j in range(n)] for i in range(n)]
        rm_up = [[[[d(gam[r][nn][s], m) - d(gam[r][m][s], nn)
                    + sum(gam[r][m][l] * gam[l][nn][s] for l in range(n))
                    - sum(gam[r][nn][l] * gam[l][m][s] for l in range(n))
                    for nn in range(n)] for m in range(n)] for s in range(n)] for r in range(n)]
        rm_low = [[[[sum(h_expr[r, l] * rm_up[l][s][m][nn] for l in range(n))
                     for nn in range(n)] for m in range(n)] for s in range(n)] for r in range(n)]

        meshes = grid.meshes()

        def ev(e):
            fn = sp.lambdify(xs, e, "numpy")
            return np.broadcast_to(np.asarray(fn(*meshes), dtype=float), grid.shape).copy()

        h_mat = np.stack([np.stack([ev(h_expr[i, j]) for j in range(n)], axis=-1) for i in range(n)], axis=-2)
        gam_full = np.stack(
            [np.stack([np.stack([ev(gam[k][i][j]) for j in range(n)], axis=-1) for i in range(n)], axis=-2)
             for k in range(n)], axis=-3)
        ric_mat = np.stack([np.stack([ev(ric[i][j]) for j in range(n)], axis=-1) for i in range(n)], axis=-2)
        rm = np.empty(grid.shape + (n,) * 4)
        for r in range(n):
            for s in range(n):
                for m in range(n):
                    for nn in range(n):
                        rm[..., r, s, m, nn] = ev(rm_low[r][s][m][nn])
        return cls(
            grid,
            Sym2Field.from_matrix(grid, h_mat),
            Christoffel3Field.from_full(grid, gam_full),
            Sym2Field.from_matrix(grid, ric_mat),
            rm,
            name,
            expr=h_expr,
            is_flat=False,
        )

    @classmethod
    def conformal(cls, grid: GridSpec, v_expr, name: str = "conformal") -> "BackgroundMetric":
        """h = exp(2 v(x)) * delta from a sympy expression v."""
        n = grid.dimension
        v_expr = sp.sympify(v_expr)
        return cls.from_expression(grid, sp.exp(2 * v_expr) * sp.eye(n), name)

    def resample(self, grid: GridSpec) -> "BackgroundMetric":
        if self.is_flat:
            return BackgroundMetric.flat(grid, self.name)
        if self.expr is None:
            raise ValueError("background has no symbolic expression to resample")
        return BackgroundMetric.from_expression(grid, self.expr, self.name)

    # -- cached pointwise data -----------------------------------------
    def matrix(self) -> np.ndarray:
        if self._mat is None:
            self._mat = self.h.matrix()
        return self._mat

    def inverse(self) -> np.ndarray:
        if self._inv is None:
            self._inv = _inv_sym(self.matrix(), _det_sym(self.matrix()))
        return self._inv

    def sqrt_det(self) -> np.ndarray:
        if self._sqrt_det is None:
            self._sqrt_det = np.sqrt(_det_sym(self.matrix()))
        return self._sqrt_det

    @property
    def curvature_bounds(self):
        """k_j = sup |nabla^j Rm(h)|, j = 0..3, measured on a capped grid."""
        if self._kj is None:
            cap = 64 if self.grid.dimension == 2 else 16
            bg = self.resample(GridSpec(self.grid.dimension, min(self.grid.resolution, cap),
                                        self.grid.derivative_order)) if self.grid.resolution > cap else self
            t = TensorField(bg.grid, bg.riemann_tilde, ("d",) * 4)
            kj = []
            for _ in range(4):
                kj.append(float(np.max(pointwise_norm(t, bg.matrix(), bg.inverse()).values)))
                t = covariant_derivative(t, bg)
            self._kj = kj
        return self._kj


# ---------------------------------------------------------------------------
# covariant derivatives and the pairing fields
# ---------------------------------------------------------------------------

def covariant_metric_derivative(g: MetricField, bg: BackgroundMetric) -> TensorField:
    """Dg[k,i,j] = nabla_k g_ij with respect to the background connection."""
    grid = g.grid
    gm = g.matrix()
    order = grid.derivative_order
    dg = np.stack([diff1(gm, ax, grid.spacing, order) for ax in range(grid.dimension)], axis=-3)
    if not bg.is_flat:
        gt = bg.christoffel_tilde.full()
        dg = dg - np.einsum("...mki,...mj->...kij", gt, gm) - np.einsum("...mkj,...im->...kij", gt, gm)
    return TensorField(grid, dg, ("d", "d", "d"))


def second_covariant_metric_derivative(g: MetricField, bg: BackgroundMetric,
                                       dg: TensorField | None = None) -> TensorField:
    """DDg[a,b,i,j] = nabla_a nabla_b g_ij with compact diagonal stencils.

    Pure second differences use the compact 3-point (or 5-point order-4)
    stencil rather than composed central differences, which keeps the
    highest-frequency mode damped and matches the fast kernels exactly.
    """
    grid = g.grid
    n = grid.dimension
    dx = grid.spacing
    order = grid.derivative_order
    gm = g.matrix()
    if dg is None:
        dg = covariant_metric_derivative(g, bg)

    ddg = np.empty(grid.shape + (n, n, n, n))
    for a in range(n):
        for b in range(n):
            if a == b:
                ddg[..., a, b, :, :] = diff2(gm, a, dx, order)
            else:
                ddg[..., a, b, :, :] = diff1(diff1(gm, b, dx, order), a, dx, order)
    if not bg.is_flat:
        gt = bg.christoffel_tilde.full()
        # d_a of the connection part of Dg_b
        corr = np.einsum("...mbi,...mj->...bij", gt, gm) + np.einsum("...mbj,...im->...bij", gt, gm)
        dcorr = np.stack([diff1(corr, ax, dx, order) for ax in range(n)], axis=-4)
        ddg = ddg - dcorr
        dgv = dg.values
        ddg = ddg - np.einsum("...mab,...mij->...abij", gt, dgv) \
                  - np.einsum("...mai,...bmj->...abij", gt, dgv) \
                  - np.einsum("...maj,...bim->...abij", gt, dgv)
    return TensorField(grid, ddg, ("d", "d", "d", "d"))


def covariant_derivative(t: TensorField, bg: BackgroundMetric) -> TensorField:
    """Background covariant derivative of a general tensor (new index first)."""
    grid = t.grid
    full = t.full()
    rank = len(t.variance)
    out = np.stack([diff1(full, ax, grid.spacing, grid.derivative_order) for ax in range(grid.dimension)],
                   axis=-(rank + 1))
    if not bg.is_flat:
        gt = bg.christoffel_tilde.full()
        letters = "abcdefgh"[:rank]
        for pos, var in enumerate(t.variance):
            src = letters[:pos] + "m" + letters[pos + 1:]
            if var == "u":
                corr = np.einsum(f"...{letters[pos]}km,...{src}->...k{letters}", gt, full)
                out = out + corr
            else:
                corr = np.einsum(f"...mk{letters[pos]},...{src}->...k{letters}", gt, full)
                out = out - corr
    return TensorField(grid, out, ("d",) + tuple(t.variance))


def difference_christoffel(g: MetricField, bg: BackgroundMetric,
                           dg: TensorField | None = None) -> Christoffel3Field:
    """Gamma^k_ij = 1/2 g^{kl} (nabla_i g_jl + nabla_j g_il - nabla_l g_ij)."""
    if dg is None:
        dg = covariant_metric_derivative(g, bg)
    dgi = dg.values
    gi = g.inverse()
    sym = dgi + np.swapaxes(dgi, -3, -2)
    gam = 0.5 * (np.einsum("...kl,...ijl->...kij", gi, sym) - np.einsum("...kl,...lij->...kij", gi, dgi))
    return Christoffel3Field.from_full(g.grid, gam)


def deturck_field_W(g: MetricField, bg: BackgroundMetric,
                    gamma: Christoffel3Field | None = None) -> VectorField:
    """W^k = g^{pq} Gamma^k_pq, the gauge vector of the background flow."""
    if gamma is None:
        gamma = difference_christoffel(g, bg)
    w = np.einsum("...pq,...kpq->...k", g.inverse(), gamma.full())
    return VectorField(g.grid, w)


def pairing_vector_V(g: MetricField, bg: BackgroundMetric,
                     dg: TensorField | None = None,
                     gamma: Christoffel3Field | None = None) -> VectorField:
    """V^k = g^{ij} Gamma^k_ij - g^{ik} Gamma^j_ji.

    Assembled from the contracted first-derivative form
    g^{ij} g^{kl} (nabla_j g_il - nabla_l g_ij); both printed forms must
    agree to round-off, which is asserted on every call.
    """
    if dg is None:
        dg = covariant_metric_derivative(g, bg)
    gi = g.inverse()
    dgv = dg.values
    vb = np.einsum("...ij,...kl,...jil->...k", gi, gi, dgv) - np.einsum(
        "...ij,...kl,...lij->...k", gi, gi, dgv
    )
    if gamma is None:
        gamma = difference_christoffel(g, bg, dg)
    gam = gamma.full()
    trace = np.einsum("...jji->...i", gam)
    va = np.einsum("...ij,...kij->...k", gi, gam) - np.einsum("...ik,...i->...k", gi, trace)
    tol = 1e-10 * (1.0 + float(np.max(np.abs(vb))))
    mismatch = float(np.max(np.abs(va - vb)))
    if mismatch > tol:
        raise AssertionError(f"pairing vector forms disagree: {mismatch:.3e} > {tol:.3e}")
    return VectorField(g.grid, vb)


def scalar_F(g: MetricField, bg: BackgroundMetric,
             dg: TensorField | None = None,
             gamma: Christoffel3Field | None = None,
             return_terms: bool = False):
    """F = tr_g Ric~ - (nabla_k g^{ij}) Gamma^k_ij + (nabla_k g^{ik}) Gamma^j_ji
           + g^{ij} (Gamma^k_kl Gamma^l_ij - Gamma^k_jl Gamma^l_ik).

    Every term is a product of first covariant derivatives of g (the
    derivative of the inverse metric is -g^{ia} g^{jb} nabla_k g_ab).
    """
    if dg is None:
        dg = covariant_metric_derivative(g, bg)
    if gamma is None:
        gamma = difference_christoffel(g, bg, dg)
    gi = g.inverse()
    gam = gamma.full()
    dginv = -np.einsum("...ia,...jb,...kab->...kij", gi, gi, dg.values)
    trace = np.einsum("...jji->...i", gam)

    term_ric = np.einsum("...ij,...ij->...", gi, bg.ricci_tilde.matrix()) if not bg.is_flat \
        else np.zeros(g.grid.shape)
    term_div = -np.einsum("...kij,...kij->...", dginv, gam)
    term_tr = np.einsum("...kik,...i->...", dginv, trace)
    term_quad = np.einsum("...ij,...l,...lij->...", gi, trace, gam) - np.einsum(
        "...ij,...kjl,...lik->...", gi, gam, gam
    )
    f_values = term_ric + term_div + term_tr + term_quad
    f_field = ScalarField(g.grid, f_values)
    if return_terms:
        terms = {
            "trace_background_ricci": ScalarField(g.grid, term_ric),
            "dginv_gamma": ScalarField(g.grid, term_div),
            "div_ginv_traced_gamma": ScalarField(g.grid, term_tr),
            "gamma_quadratic": ScalarField(g.grid, term_quad),
        }
        return f_field, terms
    return f_field


@dataclass
class PairingReport:
    """Value of the weak curvature pairing with its V- and F-parts."""

    value: float
    v_part: float
    f_part: float
    test_function_id: str = ""
    background_id: str = ""
    dimension: int = 0
    resolution: int = 0

    def to_json(self, path=None) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(payload + "\n")
        return payload


def distributional_pairing(g: MetricField, bg: BackgroundMetric, phi: ScalarField,
                           phi_id: str = "") -> PairingReport:
    """<R_g, phi>: the weak scalar-curvature functional against phi.

    The gradient acts on the product phi * dmu_g/dmu_h by finite
    differences of the product itself, so only first derivatives of g
    enter through V and F.
    """
    grid = g.grid
    omega = g.sqrt_det() / bg.sqrt_det()
    prod = phi.values * omega
    dg = covariant_metric_derivative(g, bg)
    gamma = difference_christoffel(g, bg, dg)
    v = pairing_vector_V(g, bg, dg, gamma).values
    f = scalar_F(g, bg, dg, gamma).values

    grad_prod = np.stack(
        [diff1(prod, ax, grid.spacing, grid.derivative_order) for ax in range(grid.dimension)],
        axis=-1,
    )
    v_int = -np.einsum("...k,...k->...", v, grad_prod)
    rho = bg.sqrt_det()
    v_part = integrate(v_int, rho, grid=grid)
    f_part = integrate(f * prod, rho, grid=grid)
    return PairingReport(
        value=v_part + f_part,
        v_part=v_part,
        f_part=f_part,
        test_function_id=phi_id,
        background_id=bg.name,
        dimension=grid.dimension,
        resolution=grid.resolution,
    )


# ---------------------------------------------------------------------------
# classical curvature of a smooth metric
# ---------------------------------------------------------------------------

@dataclass
class CurvatureTensors:
    riemann: TensorField          # lowered R_{rsmn}
    ricci: Sym2Field
    scalar: ScalarField
    christoffel: Christoffel3Field = dc_field(repr=False, default=None)


def classical_curvature(g: MetricField, want_riemann: bool = True) -> CurvatureTensors:
    """Coordinate Riemann/Ricci/scalar curvature by central differences.

    Needs twice-differentiable data (smooth or mollified metrics, or flow
    metrics at positive time).
    """
    grid = g.grid
    n = grid.dimension
    order = grid.derivative_order
    dx = grid.spacing
    gm = g.matrix()
    gi = g.inverse()

    dg = np.stack([diff1(gm, ax, dx, order) for ax in range(n)], axis=-3)
    sym = dg + np.swapaxes(dg, -3, -2)
    gam = 0.5 * (np.einsum("...kl,...ijl->...kij", gi, sym) - np.einsum("...kl,...lij->...kij", gi, dg))
    dgam = np.stack([diff1(gam, ax, dx, order) for ax in range(n)], axis=-4)

    trace = np.einsum("...jji->...i", gam)
    ric = (
        np.einsum("...kkij->...ij", dgam)
        - np.einsum("...ikkj->...ij", dgam)
        + np.einsum("...l,...lij->...ij", trace, gam)
        - np.einsum("...kil,...lkj->...ij", gam, gam)
    )
    ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    scalar = np.einsum("...ij,...ij->...", gi, ric)

    riemann = None
    if want_riemann:
        rm_up = (
            np.einsum("...mrns->...rsmn", dgam)
            - np.einsum("...nrms->...rsmn", dgam)
            + np.einsum("...rml,...lns->...rsmn", gam, gam)
            - np.einsum("...rnl,...lms->...rsmn", gam, gam)
        )
        rm_low = np.einsum("...rl,...lsmn->...rsmn", gm, rm_up)
        riemann = TensorField(grid, rm_low, ("d",) * 4)

    return CurvatureTensors(
        riemann=riemann,
        ricci=Sym2Field.from_matrix(grid, ric),
        scalar=ScalarField(grid, scalar),
        christoffel=Christoffel3Field.from_full(grid, gam),
    )


def tensor_norm(t: Field, metric) -> ScalarField:
    """Pointwise norm of any field with indices moved by the given metric
    (a MetricField, a BackgroundMetric, or None for the flat reference)."""
    if metric is None:
        return pointwise_norm(t)
    return pointwise_norm(t, metric.matrix(), metric.inverse())
