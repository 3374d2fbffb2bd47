"""Rough test metrics with a prescribed singular set, and cutoff families.

Generators produce conformally flat metrics g = exp(2u) * delta whose
profile near the singular set Sigma controls the integrability of the
first derivatives:

  cone_point / cone_circle : u = -amplitude * chi(r/r_cut) * r^alpha, so
      |grad g| ~ r^(alpha-1) near Sigma and grad g is in L^p exactly for
      p < p_max = (n - dim Sigma) / (1 - alpha);
  interface_stripe : u = amplitude * (1 - d/w)^2 clipped at 0, Lipschitz
      with a kink across the codimension-1 interface (p_max = infinity).
      With amplitude > 0 the kink concentrates positive curvature on the
      interface, so pointwise floors away from Sigma transfer to the weak
      functional; amplitude < 0 gives the failing case for negative tests.

The cutoff families follow the localization argument's orientation:
eta_eps is identically 1 NEAR Sigma and supported in the eps-ball around
it (the complementary convention is simply 1 - eta_eps).  Their gradient
integrals obey Int |grad eta_eps|^q ~ eps^(n - q - dim Sigma).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SpecInfeasible, UnresolvedCutoff
from .geometry import BackgroundMetric, MetricField, classical_curvature, distributional_pairing
from .grid import GridSpec, ScalarField, integrate
from .testfunctions import standard_library

__all__ = [
    "SingularMetricSpec",
    "CutoffFamily",
    "make_singular_metric",
    "build_cutoffs",
    "verify_distributional_floor",
    "FloorReport",
]

_KINDS = ("cone_point", "cone_circle", "interface_stripe")


def _periodic_delta(x: np.ndarray, c: float) -> np.ndarray:
    d = x - c
    return d - np.round(d)


@dataclass(frozen=True)
class SingularMetricSpec:
    """Descriptor of a rough metric and its singular set Sigma.

    ``center`` locates Sigma: all n coordinates for a point, the
    coordinates transverse to axis 1 for a circle (n = 3), the axis-1
    offset for a stripe.  ``alpha`` is the cone exponent (unused for
    stripes); ``amplitude`` scales the conformal profile.
    """

    kind: str
    amplitude: float
    alpha: float = 0.5
    center: tuple = (0.5, 0.5)
    profile_radius: float = 0.25
    stripe_width: float = 0.15

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown singular kind {self.kind!r}")
        if self.kind != "interface_stripe" and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"cone exponent must be in (0,1), got {self.alpha}")

    def sigma_dim(self, n: int) -> int:
        if self.kind == "cone_point":
            return 0
        if self.kind == "cone_circle":
            if n != 3:
                raise ValueError("cone_circle requires a 3-torus")
            return 1
        return n - 1

    def p_max(self, n: int) -> float:
        """Supremum of p with grad g in L^p: (n - dim Sigma)/(1 - alpha)."""
        if self.kind == "interface_stripe":
            return float("inf")
        return (n - self.sigma_dim(n)) / (1.0 - self.alpha)

    def distance_values(self, grid: GridSpec) -> np.ndarray:
        """Periodic distance to Sigma at the grid nodes."""
        meshes = grid.meshes()
        n = grid.dimension
        if self.kind == "cone_point":
            return np.sqrt(sum(_periodic_delta(meshes[a], self.center[a]) ** 2 for a in range(n)))
        if self.kind == "cone_circle":
            return np.sqrt(sum(_periodic_delta(meshes[a], self.center[a - 1]) ** 2 for a in (1, 2)))
        return np.abs(_periodic_delta(meshes[0], self.center[0]))

    def distance_field(self, grid: GridSpec) -> ScalarField:
        return ScalarField(grid, self.distance_values(grid))

    def conformal_exponent(self, grid: GridSpec) -> np.ndarray:
        """The profile u with g = exp(2u) * delta."""
        d = self.distance_values(grid)
        if self.kind == "interface_stripe":
            ramp = np.clip(1.0 - d / self.stripe_width, 0.0, None)
            return self.amplitude * ramp**2
        s = d / self.profile_radius
        chi = np.where(s < 1.0, (1.0 - np.minimum(s, 1.0) ** 2) ** 3, 0.0)
        return -self.amplitude * chi * d**self.alpha


def make_singular_metric(spec: SingularMetricSpec, grid: GridSpec):
    """Sample the rough metric and measure its pointwise curvature floor.

    Returns (metric, a_floor) where a_floor is the infimum of the
    classical scalar curvature outside a tube of radius 3*dx around
    Sigma, evaluated on a twice-refined auxiliary grid.  Grid points on
    Sigma take the continuous extension of g (u -> 0 there).
    """
    n = grid.dimension
    if spec.kind != "interface_stripe" and spec.p_max(n) <= n:
        raise SpecInfeasible(
            f"p_max = {spec.p_max(n):.3f} <= n = {n}; no admissible Sobolev exponent"
        )
    g = MetricField.conformal_flat(grid, spec.conformal_exponent(grid),
                                   name=f"{spec.kind}_a{spec.alpha:g}_A{spec.amplitude:g}")

    fine = grid.refine(2)
    g_fine = MetricField.conformal_flat(fine, spec.conformal_exponent(fine))
    scal = classical_curvature(g_fine, want_riemann=False).scalar.values
    outside = spec.distance_values(fine) > 3.0 * grid.spacing
    a_floor = float(np.min(scal[outside]))
    return g, a_floor


# ---------------------------------------------------------------------------
# cutoff families
# ---------------------------------------------------------------------------

def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _ramp(s: np.ndarray) -> np.ndarray:
    # 1 for s <= 1/2, 0 for s >= 1, C^2 monotone in between
    return 1.0 - _smoothstep(2.0 * (s - 0.5))


def _ramp_deriv_mag(s: np.ndarray) -> np.ndarray:
    t = np.clip(2.0 * (s - 0.5), 0.0, 1.0)
    return 2.0 * (30.0 * t**2 * (1.0 - t) ** 2)


@dataclass
class CutoffFamily:
    """eps-indexed cutoffs eta_eps: 1 near Sigma, supported in B_eps(Sigma)."""

    sigma: SingularMetricSpec
    eps_sequence: list
    q: float
    etas: list                      # ScalarFields, one per eps
    gradient_integrals: list        # Int |grad eta_eps|^q dmu_h
    decay_exponent_closed_form: float
    applicable: bool                # False when H^{n-q-dim Sigma} decay fails

    def fitted_exponent(self) -> float:
        eps = np.asarray(self.eps_sequence)
        vals = np.asarray(self.gradient_integrals)
        slope = np.polyfit(np.log(eps), np.log(vals), 1)[0]
        return float(slope)

    def to_json(self, path=None) -> str:
        payload = {
            "kind": self.sigma.kind,
            "q": self.q,
            "eps_sequence": list(map(float, self.eps_sequence)),
            "gradient_integrals": list(map(float, self.gradient_integrals)),
            "decay_exponent_closed_form": self.decay_exponent_closed_form,
            "fitted_exponent": self.fitted_exponent() if self.applicable else None,
            "applicable": self.applicable,
        }
        text = json.dumps(payload, sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def build_cutoffs(sigma: SingularMetricSpec, eps_sequence, q: float, grid: GridSpec,
                  bg: BackgroundMetric | None = None) -> CutoffFamily:
    """Cutoffs from a smooth ramp of the distance to Sigma.

    Requires every radius to be resolved by more than 6 cells.  The
    gradient magnitude uses |grad dist| = 1 almost everywhere, so the
    integrals carry no stencil error at the kinks of the distance.
    """
    if q < 1.0:
        raise ValueError(f"q must be >= 1, got {q}")
    eps_sequence = [float(e) for e in eps_sequence]
    for eps in eps_sequence:
        if eps <= 6.0 * grid.spacing:
            raise UnresolvedCutoff(f"eps {eps} <= 6*dx = {6*grid.spacing}")
    n = grid.dimension
    d = sigma.distance_values(grid)
    rho = bg.sqrt_det() if bg is not None else None

    etas, integrals = [], []
    for eps in eps_sequence:
        s = d / eps
        etas.append(ScalarField(grid, _ramp(s)))
        grad_mag = _ramp_deriv_mag(s) / eps
        integrals.append(integrate(grad_mag**q, rho, grid=grid))
    exponent = n - q - sigma.sigma_dim(n)
    return CutoffFamily(
        sigma=sigma,
        eps_sequence=eps_sequence,
        q=q,
        etas=etas,
        gradient_integrals=integrals,
        decay_exponent_closed_form=float(exponent),
        applicable=exponent > 0.0,
    )


# ---------------------------------------------------------------------------
# distributional floor verification
# ---------------------------------------------------------------------------

@dataclass
class FloorReport:
    """Per-test-function slacks of <R_g - a, phi> >= 0, with near/far split."""

    a: float
    rows: list                 # dicts: name, pairing, a_mass, slack, near, far
    violation: float           # max(0, -min slack)
    tol: float | None
    passed: bool | None

    def to_json(self, path=None) -> str:
        text = json.dumps(self.__dict__, sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def verify_distributional_floor(g: MetricField, bg: BackgroundMetric, a: float,
                                library=None, sigma: SingularMetricSpec | None = None,
                                split_eps: float | None = None,
                                tol: float | None = None) -> FloorReport:
    """Report <R_g, phi> - a * Int phi dmu_g for each nonnegative phi.

    When Sigma is supplied the value is also split into the near part
    <R_g - a, eta phi> and the far part <R_g - a, (1-eta) phi> for one
    resolved cutoff radius, following the localization argument.
    """
    grid = g.grid
    if library is None:
        library = standard_library()
    eta = None
    if sigma is not None:
        eps = split_eps if split_eps is not None else max(8.0 * grid.spacing, 0.05)
        eta = build_cutoffs(sigma, [eps], q=1.0, grid=grid, bg=bg).etas[0]

    rho_g = g.sqrt_det()
    rows = []
    for u in library:
        phi = u.sample(grid)
        if float(phi.values.min()) < 0.0:
            raise ValueError(f"test function {u.name} is not nonnegative")
        rep = distributional_pairing(g, bg, phi, u.name)
        mass = integrate(phi.values, rho_g, grid=grid)
        row = {
            "name": u.name,
            "pairing": rep.value,
            "a_mass": a * mass,
            "slack": rep.value - a * mass,
        }
        if eta is not None:
            near_phi = ScalarField(grid, eta.values * phi.values)
            far_phi = ScalarField(grid, (1.0 - eta.values) * phi.values)
            near = distributional_pairing(g, bg, near_phi, u.name + ":near").value \
                - a * integrate(near_phi.values, rho_g, grid=grid)
            far = distributional_pairing(g, bg, far_phi, u.name + ":far").value \
                - a * integrate(far_phi.values, rho_g, grid=grid)
            row["near"] = near
            row["far"] = far
        rows.append(row)
    violation = max(0.0, -min(r["slack"] for r in rows))
    passed = (violation <= tol) if tol is not None else None
    return FloorReport(a=a, rows=rows, violation=violation, tol=tol, passed=passed)
