"""Manufactured-solution oracles, built symbolically and independent of the
library's finite-difference assembly paths.

Given an analytic metric as a sympy matrix, everything (Christoffels,
curvature, the pairing fields V and F against the flat background, the
flow right-hand side in its literal form) is derived by symbolic
differentiation and lambdified; the library's stencil results are then
compared against exact samples of these fields.
"""

import functools

import numpy as np
import sympy as sp

_XS = sp.symbols("x1 x2 x3")


def _sym_locals(n):
    return {f"x{i+1}": _XS[i] for i in range(n)} | {"pi": sp.pi}


class MetricOracle:
    """Exact tensor fields of an analytic metric on T^n (flat reference)."""

    def __init__(self, g_expr: sp.Matrix, n: int):
        self.n = n
        xs = _XS[:n]
        g = sp.Matrix(g_expr)
        gi = g.inv()

        def d(f, k):
            return sp.diff(f, xs[k])

        gam = [[[sum(sp.Rational(1, 2) * gi[k, l] * (d(g[i, l], j) + d(g[j, l], i) - d(g[i, j], l))
                     for l in range(n))
                 for j in range(n)] for i in range(n)] for k in range(n)]
        ric = [[sum(d(gam[k][i][j], k) for k in range(n))
                - sum(d(gam[k][k][j], i) for k in range(n))
                + sum(gam[k][k][l] * gam[l][i][j] for k in range(n) for l in range(n))
                - sum(gam[k][i][l] * gam[l][k][j] for k in range(n) for l in range(n))
                for j in range(n)] for i in range(n)]
        scal = sum(gi[i, j] * ric[i][j] for i in range(n) for j in range(n))

        vvec = [sum(gi[i, j] * gam[k][i][j] for i in range(n) for j in range(n))
                - sum(gi[i, k] * gam[j][j][i] for i in range(n) for j in range(n))
                for k in range(n)]
        F = (- sum(d(gi[i, j], k) * gam[k][i][j] for i in range(n) for j in range(n) for k in range(n))
             + sum(d(gi[i, k], k) * gam[j][j][i] for i in range(n) for k in range(n) for j in range(n))
             + sum(gi[i, j] * (gam[k][k][l] * gam[l][i][j] - gam[k][j][l] * gam[l][i][k])
                   for i in range(n) for j in range(n) for k in range(n) for l in range(n)))

        grad_sq = sum(d(g[i, j], k) ** 2 for i in range(n) for j in range(n) for k in range(n))

        # literal flow right-hand side: -2 Ric + g-covariant symmetrized
        # derivative of the gauge covector (flat background)
        w = [sum(gi[p, q] * gam[k][p][q] for p in range(n) for q in range(n)) for k in range(n)]
        v_low = [sum(g[j, k] * w[k] for k in range(n)) for j in range(n)]
        nab = [[d(v_low[j], i) - sum(gam[m][i][j] * v_low[m] for m in range(n)) for j in range(n)]
               for i in range(n)]
        rhs = [[-2 * ric[i][j] + nab[i][j] + nab[j][i] for j in range(n)] for i in range(n)]

        self._g = g
        self._fn = {}
        self._exprs = {
            "scalar_curvature": scal,
            "F": F,
            "grad_norm_flat": sp.sqrt(grad_sq),
            "sqrt_det": sp.sqrt(g.det()),
        }
        for i in range(n):
            self._exprs[f"V{i}"] = vvec[i]
            for j in range(n):
                self._exprs[f"g{i}{j}"] = g[i, j]
                self._exprs[f"ric{i}{j}"] = ric[i][j]
                self._exprs[f"rhs{i}{j}"] = rhs[i][j]
                for k in range(n):
                    self._exprs[f"gam{k}{i}{j}"] = gam[k][i][j]

    def _eval(self, key, meshes):
        if key not in self._fn:
            self._fn[key] = sp.lambdify(_XS[: self.n], self._exprs[key], "numpy")
        out = self._fn[key](*meshes)
        return np.broadcast_to(np.asarray(out, dtype=float), meshes[0].shape).copy()

    def scalar_curvature(self, grid):
        return self._eval("scalar_curvature", grid.meshes())

    def metric_matrix(self, grid):
        meshes = grid.meshes()
        n = self.n
        out = np.empty(grid.shape + (n, n))
        for i in range(n):
            for j in range(n):
                out[..., i, j] = self._eval(f"g{i}{j}", meshes)
        return out

    def ricci_matrix(self, grid):
        meshes = grid.meshes()
        n = self.n
        out = np.empty(grid.shape + (n, n))
        for i in range(n):
            for j in range(n):
                out[..., i, j] = self._eval(f"ric{i}{j}", meshes)
        return out

    def christoffel_full(self, grid):
        meshes = grid.meshes()
        n = self.n
        out = np.empty(grid.shape + (n, n, n))
        for k in range(n):
            for i in range(n):
                for j in range(n):
                    out[..., k, i, j] = self._eval(f"gam{k}{i}{j}", meshes)
        return out

    def pairing_vector(self, grid):
        meshes = grid.meshes()
        out = np.empty(grid.shape + (self.n,))
        for k in range(self.n):
            out[..., k] = self._eval(f"V{k}", meshes)
        return out

    def scalar_F(self, grid):
        return self._eval("F", grid.meshes())

    def grad_norm_flat(self, grid):
        return self._eval("grad_norm_flat", grid.meshes())

    def sqrt_det(self, grid):
        return self._eval("sqrt_det", grid.meshes())

    def flow_rhs(self, grid):
        meshes = grid.meshes()
        n = self.n
        out = np.empty(grid.shape + (n, n))
        for i in range(n):
            for j in range(n):
                out[..., i, j] = self._eval(f"rhs{i}{j}", meshes)
        return out


@functools.lru_cache(maxsize=32)
def conformal_oracle(u_src: str, n: int = 2) -> MetricOracle:
    """Oracle for g = exp(2u) delta; also checks R = -2 e^{-2u} Lap u in 2D."""
    u = sp.sympify(u_src, locals=_sym_locals(n))
    g = sp.exp(2 * u) * sp.eye(n)
    oracle = MetricOracle(g, n)
    if n == 2:
        xs = _XS[:n]
        lap_u = sum(sp.diff(u, x, 2) for x in xs)
        identity_R = -2 * sp.exp(-2 * u) * lap_u
        diff = sp.simplify(oracle._exprs["scalar_curvature"] - identity_R)
        assert diff == 0, "conformal curvature identity failed symbolically"
    return oracle


@functools.lru_cache(maxsize=32)
def matrix_oracle(entries_src: tuple, n: int = 2) -> MetricOracle:
    """Oracle from a tuple-of-tuples of sympy source strings."""
    loc = _sym_locals(n)
    g = sp.Matrix([[sp.sympify(entries_src[i][j], locals=loc) for j in range(n)] for i in range(n)])
    return MetricOracle(g, n)


def fit_order(spacings, errors) -> float:
    """Least-squares convergence order from error-vs-spacing samples."""
    return float(np.polyfit(np.log(np.asarray(spacings)), np.log(np.asarray(errors)), 1)[0])
