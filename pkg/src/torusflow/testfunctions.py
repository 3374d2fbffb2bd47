"""Library of nonnegative test functions with grid-independent Sobolev norms.

The pairing estimates are normalized by ||u||_{W^{1,n/(n-1)}}; computing
that norm on the working grid would fold one layer of quadrature error
into the normalized reports, so the norms here are evaluated once per
(function, dimension) on a fine dedicated reference lattice (periodic
trapezoid, spectrally accurate for these smooth functions) and cached.

Norm convention: ||u||_{W^{1,q}} = ( Int |u|^q + |grad u|^q dx )^{1/q}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ScalarField

__all__ = ["TestFunction", "standard_library", "w1q_norm"]

_REFERENCE_RES = {2: 2048, 3: 160}
_norm_cache: dict = {}


def _bump_profile(s: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1-s^2)) on |s|<1, 0 outside; peak value 1."""
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si**2))
    return out


def _bump_profile_deriv(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


@dataclass(frozen=True)
class TestFunction:
    """Nonnegative smooth function on the torus with an exact gradient rule."""

    name: str
    value_fn: callable        # meshes -> values
    grad_fn: callable         # meshes -> list of partial derivatives

    def sample(self, grid: GridSpec) -> ScalarField:
        return ScalarField(grid, np.asarray(self.value_fn(grid.meshes()), dtype=float))

    def w1q_norm(self, n: int) -> float:
        """||u||_{W^{1, n/(n-1)}} on T^n, fine-lattice reference value."""
        return w1q_norm(self, n)


def w1q_norm(u: TestFunction, n: int) -> float:
    key = (u.name, n)
    if key not in _norm_cache:
        q = n / (n - 1)
        m = _REFERENCE_RES[n]
        axes = np.meshgrid(*([np.arange(m) / m] * n), indexing="ij")
        vals = np.asarray(u.value_fn(axes), dtype=float)
        grads = u.grad_fn(axes)
        grad_sq = np.zeros_like(vals)
        for gcomp in grads:
            grad_sq = grad_sq + np.asarray(gcomp, dtype=float) ** 2
        cell = (1.0 / m) ** n
        total = (np.sum(np.abs(vals) ** q) + np.sum(grad_sq ** (q / 2.0))) * cell
        _norm_cache[key] = float(total ** (1.0 / q))
    return _norm_cache[key]


def _one():
    def value(meshes):
        return np.ones_like(meshes[0])

    def grad(meshes):
        return [np.zeros_like(m) for m in meshes]

    return TestFunction("one", value, grad)


def _axis_bump(axis: int):
    def value(meshes):
        base = 0.5 * (1.0 + np.sin(2.0 * np.pi * meshes[axis]))
        return base * np.ones_like(meshes[0])

    def grad(meshes):
        out = [np.zeros_like(m) for m in meshes]
        out[axis] = np.pi * np.cos(2.0 * np.pi * meshes[axis]) * np.ones_like(meshes[0])
        return out

    return TestFunction(f"axis_bump_{axis + 1}", value, grad)


def _axis_bump_product():
    def value(meshes):
        out = np.ones_like(meshes[0])
        for m in meshes[:2]:
            out = out * 0.5 * (1.0 + np.sin(2.0 * np.pi * m))
        return out

    def grad(meshes):
        f = [0.5 * (1.0 + np.sin(2.0 * np.pi * m)) for m in meshes[:2]]
        df = [np.pi * np.cos(2.0 * np.pi * m) for m in meshes[:2]]
        out = [np.zeros_like(m) for m in meshes]
        out[0] = df[0] * f[1]
        out[1] = f[0] * df[1]
        return out

    return TestFunction("axis_bump_product", value, grad)


def _radial_bump(center: tuple = None, radius: float = 0.25):
    # supported in a ball of the given radius (inside a half period), so the
    # Euclidean distance to the center agrees with the torus distance there
    def _dist_parts(meshes, n):
        c = center if center is not None else (0.5,) * n
        deltas = []
        for a in range(n):
            da = meshes[a] - c[a]
            da = da - np.round(da)
            deltas.append(da)
        d = np.sqrt(sum(da**2 for da in deltas))
        return d, deltas

    def value(meshes):
        d, _ = _dist_parts(meshes, len(meshes))
        return _bump_profile(d / radius)

    def grad(meshes):
        n = len(meshes)
        d, deltas = _dist_parts(meshes, n)
        dprof = _bump_profile_deriv(d / radius) / radius
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(d > 0, dprof / np.where(d > 0, d, 1.0), 0.0)
        return [scale * da for da in deltas]

    return TestFunction("radial_bump", value, grad)


def standard_library(include_radial: bool = True):
    """The fixed nonnegative test set: 1, axis bumps, their product, and a
    smooth radial bump supported in a half period."""
    lib = [_one(), _axis_bump(0), _axis_bump(1), _axis_bump_product()]
    if include_radial:
        lib.append(_radial_bump())
    return lib
