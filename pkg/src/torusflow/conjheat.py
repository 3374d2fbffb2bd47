"""Backward heat transport of densities along a stored flow trajectory.

Solves, backward from terminal data phi_T >= 0 at time T,

    d/dt phi = -Lap_{g(t)} phi + R_{g(t)} phi + W.grad phi,

where W is the gauge vector field of the background flow.  The advection
term transports the equation into the gauge the trajectory is stored in;
with it the functional

    M(t) = Int (R_{g(t)} - a) phi_t dmu_{g(t)}

satisfies dM/dt = Int 2 |Ric|^2 phi dmu >= 0 exactly (gauge and
divergence terms cancel), and the total mass Int phi dmu_{g(t)} is
conserved.  ``gauge_transport=False`` gives the plain equation for
comparison.

Spatial operator: divergence-form Laplace-Beltrami with compact staggered
diagonal fluxes and centered cross terms, self-adjoint against the
discrete dmu_g inner product to round-off.  That self-adjointness is the
arbiter of the kernel argument-order convention: backward transport is
the transpose of forward heat transport, i.e. terminal data pairs with
the kernel's late-time slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _kernels
from .errors import NegativeTerminalData
from .flow import FlowTrajectory
from .geometry import (
    BackgroundMetric,
    MetricField,
    classical_curvature,
    deturck_field_W,
    difference_christoffel,
)
from .grid import ScalarField, Sym2Field, diff1, integrate

__all__ = [
    "ConjugateSolution",
    "solve_conjugate",
    "kernel_mass",
    "KernelMassReport",
    "monotone_functional_check",
    "MonotoneReport",
    "energy_bound_check",
    "EnergyReport",
    "constant_trajectory",
    "BackgroundSlice",
]


def constant_trajectory(g: MetricField, bg: BackgroundMetric, T0: float,
                        p: float = 3.0) -> FlowTrajectory:
    """Trajectory frozen at a single metric (static background)."""
    from .flow import DIAGNOSTIC_COLUMNS, FlowConfig

    config = FlowConfig(T0=T0, p=p, rhs_cross_check=False)
    traj = FlowTrajectory(grid=g.grid, bg=bg, config=config, initial=g.g.copy())
    traj.checkpoint_times_list = [0.0, T0]
    traj.checkpoint_values = [g.g.values.copy(), g.g.values.copy()]
    traj.diagnostics = {c: np.array([0.0, 0.0]) for c in DIAGNOSTIC_COLUMNS}
    traj.diagnostics["t"] = np.array([0.0, T0])
    traj.status = "completed"
    return traj


class BackgroundSlice:
    """Metric-dependent operator data at one time: the divergence-form
    Laplacian, scalar curvature, and gauge vector field.

    The 2D flat-background order-2 case runs through fused stencil
    kernels; everything else uses the generic array path (identical
    formulas, checked against each other in the tests).
    """

    def __init__(self, grid, g_packed: np.ndarray, bg: BackgroundMetric,
                 gauge_transport: bool):
        self.grid = grid
        self.gauge_transport = gauge_transport
        self.fast = grid.dimension == 2 and grid.derivative_order == 2 and bg.is_flat
        if self.fast:
            a, b, c = g_packed[..., 0], g_packed[..., 1], g_packed[..., 2]
            det = a * c - b * b
            self.rho = np.sqrt(det)
            self.gi00, self.gi01, self.gi11 = c / det, -b / det, a / det
            self.m00 = self.rho * self.gi00
            self.m01 = self.rho * self.gi01
            self.m11 = self.rho * self.gi11
            half_tr = 0.5 * (a + c)
            disc = np.sqrt(0.25 * (a - c) ** 2 + b**2)
            self.lam_min = float((half_tr - disc).min())
            gamma, _, _ = _kernels.christoffel_grad_2d(g_packed, grid.spacing)
            self.R = _kernels.scalar_curvature_2d(g_packed, gamma, grid.spacing)
            if gauge_transport:
                w0 = (self.gi00 * gamma[..., 0, 0, 0] + 2.0 * self.gi01 * gamma[..., 0, 0, 1]
                      + self.gi11 * gamma[..., 0, 1, 1])
                w1 = (self.gi00 * gamma[..., 1, 0, 0] + 2.0 * self.gi01 * gamma[..., 1, 0, 1]
                      + self.gi11 * gamma[..., 1, 1, 1])
                self.W0, self.W1 = w0, w1
            else:
                self.W0 = self.W1 = None
            self._zero = np.zeros(grid.shape)
        else:
            metric = MetricField(Sym2Field(grid, g_packed))
            self.rho = metric.sqrt_det()
            self.gi = metric.inverse()
            self.m = self.rho[..., None, None] * self.gi
            self.lam_min = metric.ellipticity[0]
            self.R = classical_curvature(metric, want_riemann=False).scalar.values
            self.W = deturck_field_W(metric, bg, difference_christoffel(metric, bg)).values \
                if gauge_transport else None

    # -- generic array path ---------------------------------------------
    def _laplace_slow(self, phi: np.ndarray) -> np.ndarray:
        grid = self.grid
        dx = grid.spacing
        out = np.zeros_like(phi)
        for i in range(grid.dimension):
            mii = self.m[..., i, i]
            w = 0.5 * (mii + np.roll(mii, -1, axis=i))
            dplus = (np.roll(phi, -1, axis=i) - phi) / dx
            flux = w * dplus
            out += (flux - np.roll(flux, 1, axis=i)) / dx
            for j in range(grid.dimension):
                if j != i:
                    dj = diff1(phi, j, dx, 2)
                    out += diff1(self.m[..., i, j] * dj, i, dx, 2)
        return out / self.rho

    def laplace(self, phi: np.ndarray) -> np.ndarray:
        if self.fast:
            return _kernels.conj_backward_rhs_2d(
                phi, self.m00, self.m01, self.m11, self.rho, self._zero,
                self._zero, self._zero, self.grid.spacing, False,
            )
        return self._laplace_slow(phi)

    def backward_rhs(self, phi: np.ndarray) -> np.ndarray:
        """d phi / ds with s = T - t."""
        if self.fast:
            use_w = self.W0 is not None
            return _kernels.conj_backward_rhs_2d(
                phi, self.m00, self.m01, self.m11, self.rho, self.R,
                self.W0 if use_w else self._zero, self.W1 if use_w else self._zero,
                self.grid.spacing, use_w,
            )
        out = self._laplace_slow(phi) - self.R * phi
        if self.W is not None:
            grid = self.grid
            for k in range(grid.dimension):
                out -= self.W[..., k] * diff1(phi, k, grid.spacing, 2)
        return out

    def series(self, phi: np.ndarray, a: float):
        """(mass, functional M, energy E, min phi, max phi) at this time."""
        grid = self.grid
        cell = grid.spacing**grid.dimension
        if self.fast:
            mass, func, energy, pmin, pmax = _kernels.conj_series_2d(
                phi, self.rho, self.R, self.gi00, self.gi01, self.gi11,
                grid.spacing, a,
            )
            return (float(np.sum(mass) * cell), float(np.sum(func) * cell),
                    float(np.sum(energy) * cell), float(pmin.min()), float(pmax.max()))
        grads = [diff1(phi, k, grid.spacing, 2) for k in range(grid.dimension)]
        e = np.zeros_like(phi)
        for i in range(grid.dimension):
            for j in range(grid.dimension):
                e += self.gi[..., i, j] * grads[i] * grads[j]
        return (
            integrate(phi, self.rho, grid=grid),
            integrate((self.R - a) * phi, self.rho, grid=grid),
            integrate(e, self.rho, grid=grid),
            float(phi.min()),
            float(phi.max()),
        )

    def ibp_residual(self, phi: np.ndarray) -> float:
        """Int (Lap R * phi - R * Lap phi) dmu_g; round-off sized when the
        discrete operator is exactly self-adjoint."""
        lr = self.laplace(self.R)
        lp = self.laplace(phi)
        return integrate(lr * phi - self.R * lp, self.rho, grid=self.grid)


@dataclass
class ConjugateSolution:
    """Backward solution with its monitored series (ascending in t)."""

    T: float
    t_min: float
    a: float
    gauge_transport: bool
    terminal_name: str
    times: np.ndarray = None
    functional_series: np.ndarray = None        # M(t) = Int (R - a) phi dmu
    energy_series: np.ndarray = None            # E(t) = Int |grad phi|^2_g dmu
    mass_series: np.ndarray = None
    phi_min_series: np.ndarray = None
    phi_max_series: np.ndarray = None
    snapshots: list = dc_field(default_factory=list)     # (t, ScalarField)
    ibp_residuals: list = dc_field(default_factory=list)  # (t, value)
    terminal_sup: float = 0.0

    def series_to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# schema: torusflow.conjugate.v1\n")
            fh.write("t,M,E,mass,min_phi,max_phi\n")
            for row in zip(self.times, self.functional_series, self.energy_series,
                           self.mass_series, self.phi_min_series, self.phi_max_series):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def solve_conjugate(traj: FlowTrajectory, phi_terminal: ScalarField, T: float,
                    t_min: float, a: float, gauge_transport: bool = True,
                    c_cfl: float = 0.25, terminal_name: str = "") -> ConjugateSolution:
    """Integrate backward from phi(T) = phi_terminal down to t_min.

    Time stepping is explicit RK2 in s = T - t under the same CFL
    discipline as the flow; the metric at intermediate times is the
    checkpoint interpolant (ellipticity re-checked).  All series are
    recorded at every accepted step; snapshots are stored at the
    trajectory's checkpoint times.
    """
    grid = traj.grid
    if float(phi_terminal.values.min()) < 0.0:
        raise NegativeTerminalData(
            f"terminal data must be nonnegative, min = {phi_terminal.values.min():.3e}"
        )
    lo_t = traj.checkpoint_times_list[0]
    hi_t = traj.checkpoint_times_list[-1]
    if not (lo_t - 1e-12 <= t_min < T <= hi_t + 1e-12):
        raise ValueError(f"[t_min, T] = [{t_min}, {T}] outside trajectory range [{lo_t}, {hi_t}]")

    bg = traj.bg
    phi = phi_terminal.values.copy()
    t = float(T)
    snap_times = sorted((ct for ct in traj.checkpoint_times_list if t_min <= ct < T), reverse=True)
    tiny = 1e-14

    cache: dict = {}

    def slice_at(tq: float) -> BackgroundSlice:
        key = round(tq, 15)
        if cache.get("key") != key:
            cache["key"] = key
            cache["slice"] = BackgroundSlice(grid, traj.packed_at(tq), bg, gauge_transport)
        return cache["slice"]

    times, m_ser, e_ser, mass_ser, mn_ser, mx_ser = [], [], [], [], [], []
    snapshots, residuals = [], []

    def record(tq: float, sl: BackgroundSlice, phiv: np.ndarray):
        mass, func, energy, pmin, pmax = sl.series(phiv, a)
        times.append(tq)
        m_ser.append(func)
        e_ser.append(energy)
        mass_ser.append(mass)
        mn_ser.append(pmin)
        mx_ser.append(pmax)

    sl = slice_at(t)
    record(t, sl, phi)
    residuals.append((t, sl.ibp_residual(phi)))
    snap_idx = 0

    while t > t_min + tiny:
        sl = slice_at(t)
        dt = c_cfl * grid.spacing**2 * sl.lam_min / grid.dimension
        dt = min(dt, t - t_min)
        if dt <= tiny:
            break
        k1 = sl.backward_rhs(phi)
        sl2 = slice_at(t - dt)
        k2 = sl2.backward_rhs(phi + dt * k1)
        phi = phi + (0.5 * dt) * (k1 + k2)
        t = t - dt
        record(t, sl2, phi)
        while snap_idx < len(snap_times) and t <= snap_times[snap_idx] + tiny:
            snapshots.append((t, ScalarField(grid, phi.copy())))
            residuals.append((t, sl2.ibp_residual(phi)))
            snap_idx += 1

    order = np.argsort(np.asarray(times))
    sol = ConjugateSolution(
        T=T, t_min=t_min, a=a, gauge_transport=gauge_transport,
        terminal_name=terminal_name,
        times=np.asarray(times)[order],
        functional_series=np.asarray(m_ser)[order],
        energy_series=np.asarray(e_ser)[order],
        mass_series=np.asarray(mass_ser)[order],
        phi_min_series=np.asarray(mn_ser)[order],
        phi_max_series=np.asarray(mx_ser)[order],
        snapshots=snapshots[::-1],
        ibp_residuals=residuals[::-1],
        terminal_sup=float(np.max(np.abs(phi_terminal.values))),
    )
    return sol


# ---------------------------------------------------------------------------
# kernel mass
# ---------------------------------------------------------------------------

@dataclass
class KernelMassReport:
    center: tuple
    width: float
    mass_series: np.ndarray
    times: np.ndarray
    sup_mass: float                 # the recorded bound C
    terminal_deviation: float       # |F - 1| at the step closest to T
    solution: ConjugateSolution


def kernel_mass(traj: FlowTrajectory, x: tuple, T: float, t_min: float,
                width_cells: float = 3.0, gauge_transport: bool = True,
                c_cfl: float = 0.25) -> KernelMassReport:
    """Mass F(t) = Int phi_t dmu_{g(t)} of the solution from a narrow
    normalized Gaussian at x (a discrete delta approximation at time T).

    Boundedness of F is asserted with the bound recorded, and F -> 1 as
    t -> T by unit-mass normalization plus discrete mass conservation.
    """
    grid = traj.grid
    sigma = width_cells * grid.spacing
    meshes = grid.meshes()
    dsq = np.zeros(grid.shape)
    for axis in range(grid.dimension):
        da = meshes[axis] - x[axis]
        da = da - np.round(da)
        dsq += da**2
    bump = np.exp(-dsq / (2.0 * sigma**2))
    g_T = traj.metric_at(T)
    mass = integrate(bump, g_T.sqrt_det(), grid=grid)
    phi_T = ScalarField(grid, bump / mass)
    sol = solve_conjugate(traj, phi_T, T, t_min, a=0.0,
                          gauge_transport=gauge_transport, c_cfl=c_cfl,
                          terminal_name=f"delta@{x}")
    series = sol.mass_series
    return KernelMassReport(
        center=tuple(x),
        width=sigma,
        mass_series=series,
        times=sol.times,
        sup_mass=float(np.max(series)),
        terminal_deviation=float(abs(series[-1] - 1.0)),
        solution=sol,
    )


# ---------------------------------------------------------------------------
# monotonicity and energy reports
# ---------------------------------------------------------------------------

@dataclass
class MonotoneReport:
    passed: bool
    min_step_increment: float
    eps_mono: float
    n_steps: int
    max_abs_functional: float
    max_ibp_residual: float


def monotone_functional_check(sol: ConjugateSolution,
                              eps_factor: float = 1e-6) -> MonotoneReport:
    """PASS iff M(t_{k+1}) - M(t_k) >= -eps_mono at every recorded step,
    with eps_mono = eps_factor * (1 + max |M|)."""
    m = sol.functional_series
    diffs = np.diff(m)
    max_abs = float(np.max(np.abs(m)))
    eps_mono = eps_factor * (1.0 + max_abs)
    min_inc = float(diffs.min()) if diffs.size else 0.0
    max_resid = max((abs(v) for _, v in sol.ibp_residuals), default=0.0)
    return MonotoneReport(
        passed=bool(min_inc >= -eps_mono),
        min_step_increment=min_inc,
        eps_mono=eps_mono,
        n_steps=int(diffs.size),
        max_abs_functional=max_abs,
        max_ibp_residual=float(max_resid),
    )


@dataclass
class EnergyReport:
    finite: bool
    sup_energy: float
    terminal_energy: float


def energy_bound_check(sol: ConjugateSolution) -> EnergyReport:
    """E(t) finite for all t with the supremum recorded, not predicted."""
    e = sol.energy_series
    return EnergyReport(
        finite=bool(np.all(np.isfinite(e))),
        sup_energy=float(np.max(e)),
        terminal_energy=float(e[-1]),
    )
