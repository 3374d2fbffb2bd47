import numpy as np
import pytest

from torusflow import (
    BackgroundMetric,
    FlowConfig,
    GridSpec,
    MetricField,
    NegativeTerminalData,
    ScalarField,
    SingularMetricSpec,
    constant_trajectory,
    energy_bound_check,
    kernel_mass,
    make_singular_metric,
    mollify_metric,
    monotone_functional_check,
    run_flow,
    solve_conjugate,
)
from torusflow.conjheat import BackgroundSlice
from torusflow.testfunctions import standard_library

from oracles import conformal_oracle


@pytest.fixture(scope="module")
def live_run():
    grid = GridSpec(2, 64)
    bg = BackgroundMetric.flat(grid)
    oracle = conformal_oracle("0.05*sin(2*pi*x1)*sin(2*pi*x2)")
    g0 = MetricField.from_matrix(grid, oracle.metric_matrix(grid))
    traj = run_flow(g0, bg, FlowConfig(T0=0.02, p=3.0, c_cfl=0.4))
    assert traj.status == "completed"
    return traj


@pytest.fixture(scope="module")
def cone_run():
    grid = GridSpec(2, 64)
    bg = BackgroundMetric.flat(grid)
    spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=(0.31, 0.47))
    g_raw, a_floor = make_singular_metric(spec, grid)
    g0 = mollify_metric(g_raw, 8.0 / 64)
    traj = run_flow(g0, bg, FlowConfig(T0=0.02, p=3.0, c_cfl=0.45, rhs_cross_check=False))
    assert traj.status == "completed"
    return traj, a_floor


class TestStaticBackground:
    def test_constant_data_stays_constant(self):
        grid = GridSpec(2, 64)
        bg = BackgroundMetric.flat(grid)
        traj = constant_trajectory(MetricField.flat(grid), bg, 0.01)
        sol = solve_conjugate(traj, ScalarField.constant(grid, 1.0), T=0.01, t_min=0.0, a=0.0)
        assert np.max(np.abs(sol.phi_min_series - 1.0)) <= 1e-13
        assert np.max(np.abs(sol.phi_max_series - 1.0)) <= 1e-13
        assert np.max(np.abs(sol.mass_series - 1.0)) <= 1e-12

    def test_separable_mode_matches_heat_kernel(self):
        # phi_t = 1 + 0.5 exp(-4 pi^2 (T-t)) sin(2 pi x1); frozen values
        # from the closed form at N = 64, dt at half the CFL budget
        grid = GridSpec(2, 64)
        bg = BackgroundMetric.flat(grid)
        T = 0.02
        traj = constant_trajectory(MetricField.flat(grid), bg, T)
        x1 = grid.meshes()[0]
        phi_T = ScalarField(grid, 1.0 + 0.5 * np.sin(2 * np.pi * x1))
        sol = solve_conjugate(traj, phi_T, T=T, t_min=0.0, a=0.0, c_cfl=0.125)
        t_snap, phi_end = sol.snapshots[0]
        lam = 4.0 * np.pi**2
        exact = 1.0 + 0.5 * np.exp(-lam * (T - t_snap)) * np.sin(2 * np.pi * x1)
        assert np.max(np.abs(phi_end.values - exact)) <= 2e-4
        # energy matches 2 pi^2 * amp^2 * decay^2
        e_exact = 2.0 * np.pi**2 * 0.25 * np.exp(-2.0 * lam * T)
        assert sol.energy_series[0] == pytest.approx(e_exact, rel=5e-3)

    def test_constant_energy_zero(self):
        grid = GridSpec(2, 32)
        bg = BackgroundMetric.flat(grid)
        traj = constant_trajectory(MetricField.flat(grid), bg, 0.005)
        sol = solve_conjugate(traj, ScalarField.constant(grid, 2.0), T=0.005, t_min=0.0, a=0.0)
        assert np.max(sol.energy_series) == 0.0

    def test_negative_terminal_rejected(self):
        grid = GridSpec(2, 32)
        bg = BackgroundMetric.flat(grid)
        traj = constant_trajectory(MetricField.flat(grid), bg, 0.005)
        with pytest.raises(NegativeTerminalData):
            solve_conjugate(traj, ScalarField.constant(grid, -1.0), T=0.005, t_min=0.0, a=0.0)

    def test_bad_time_range_rejected(self):
        grid = GridSpec(2, 32)
        bg = BackgroundMetric.flat(grid)
        traj = constant_trajectory(MetricField.flat(grid), bg, 0.005)
        with pytest.raises(ValueError):
            solve_conjugate(traj, ScalarField.constant(grid, 1.0), T=0.01, t_min=0.0, a=0.0)


class TestAdjointIdentity:
    def test_backward_transport_is_transpose_of_forward(self):
        # static curved metric; the operator L - R is self-adjoint against
        # dmu_g, so m Heun steps forward pair with m Heun steps backward
        # exactly -- this pins the kernel argument-order convention
        grid = GridSpec(2, 48)
        oracle = conformal_oracle("0.1*sin(2*pi*x1)*sin(2*pi*x2)")
        g = MetricField.from_matrix(grid, oracle.metric_matrix(grid))
        bg = BackgroundMetric.flat(grid)
        sl = BackgroundSlice(grid, g.g.values, bg, gauge_transport=False)
        lib = standard_library()
        u = lib[1].sample(grid).values
        v = lib[4].sample(grid).values
        dt = 0.1 * grid.spacing**2
        rho = sl.rho
        cell = grid.spacing**2

        def heun(w, steps):
            for _ in range(steps):
                k1 = sl.backward_rhs(w)
                k2 = sl.backward_rhs(w + dt * k1)
                w = w + 0.5 * dt * (k1 + k2)
            return w

        m = 25
        lhs = np.sum(heun(u, m) * v * rho) * cell
        rhs = np.sum(u * heun(v, m) * rho) * cell
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)

    def test_laplacian_self_adjoint_and_mass_free(self):
        grid = GridSpec(2, 48)
        oracle = conformal_oracle("0.1*sin(2*pi*x1)*sin(2*pi*x2)")
        g = MetricField.from_matrix(grid, oracle.metric_matrix(grid))
        sl = BackgroundSlice(grid, g.g.values, BackgroundMetric.flat(grid), False)
        rng = np.random.default_rng(1)
        u = rng.standard_normal(grid.shape)
        v = rng.standard_normal(grid.shape)
        rho = sl.rho
        asym = np.sum(sl.laplace(u) * v * rho) - np.sum(u * sl.laplace(v) * rho)
        assert abs(asym) * grid.spacing**2 <= 1e-11
        assert abs(np.sum(sl.laplace(u) * rho) * grid.spacing**2) <= 1e-12


class TestLiveBackground:
    def test_monotone_functional_smooth(self, live_run):
        grid = live_run.grid
        a = float(np.min(live_run.diagnostics["min_R"]))
        lib = standard_library()
        for u in (lib[1], lib[4]):
            sol = solve_conjugate(live_run, u.sample(grid), T=0.02, t_min=0.002, a=a,
                                  terminal_name=u.name)
            rep = monotone_functional_check(sol)
            assert rep.passed, rep
            assert rep.n_steps >= 200
            assert rep.max_ibp_residual <= 1e-9

    def test_maximum_principle_nonnegative(self, live_run):
        grid = live_run.grid
        bump = standard_library()[4].sample(grid)  # touches zero
        sol = solve_conjugate(live_run, bump, T=0.02, t_min=0.002, a=0.0)
        assert sol.phi_min_series.min() >= -1e-10 * sol.terminal_sup

    def test_uniform_bound(self, live_run):
        grid = live_run.grid
        phi = standard_library()[1].sample(grid)
        sol = solve_conjugate(live_run, phi, T=0.02, t_min=0.002, a=0.0)
        assert np.max(sol.phi_max_series) <= 2.0 * sol.terminal_sup

    def test_mass_conserved_with_gauge_transport(self, live_run):
        # conserved up to the O(dx^2 T) consistency gap between the flow
        # step's measure evolution and the conjugate-side curvature
        grid = live_run.grid
        phi = standard_library()[3].sample(grid)
        sol = solve_conjugate(live_run, phi, T=0.02, t_min=0.002, a=0.0)
        drift = np.max(np.abs(sol.mass_series - sol.mass_series[-1]))
        assert drift <= 1e-4 * (1.0 + abs(sol.mass_series[-1]))

    def test_gauge_transport_on_anisotropic_background(self):
        # conformal 2D metrics have a vanishing gauge field, so the
        # advection term only becomes load-bearing off the conformal
        # family; there it is what keeps the functional monotone
        from oracles import matrix_oracle

        grid = GridSpec(2, 64)
        bg = BackgroundMetric.flat(grid)
        oracle = matrix_oracle((("1 + 0.12*cos(2*pi*x2)", "0"),
                                ("0", "1 + 0.1*sin(2*pi*x1)")))
        g0 = MetricField.from_matrix(grid, oracle.metric_matrix(grid))
        traj = run_flow(g0, bg, FlowConfig(T0=0.02, p=3.0, c_cfl=0.4, fairness_eps=0.4))
        assert traj.status == "completed"
        a = float(np.min(traj.diagnostics["min_R"]))
        phi = standard_library()[1].sample(grid)
        with_gauge = solve_conjugate(traj, phi, T=0.02, t_min=0.002, a=a)
        without = solve_conjugate(traj, phi, T=0.02, t_min=0.002, a=a,
                                  gauge_transport=False)
        rep = monotone_functional_check(with_gauge)
        assert rep.passed, rep
        # the two equations genuinely differ on this background
        gap = np.max(np.abs(with_gauge.functional_series - without.functional_series))
        assert gap > 1e-7

    def test_monotone_functional_mollified_cone(self, cone_run):
        traj, a_floor = cone_run
        grid = traj.grid
        phi = standard_library()[1].sample(grid)
        sol = solve_conjugate(traj, phi, T=0.02, t_min=0.002, a=a_floor)
        rep = monotone_functional_check(sol)
        assert rep.passed, rep
        assert rep.n_steps >= 200

    def test_energy_bound(self, live_run):
        grid = live_run.grid
        phi = standard_library()[1].sample(grid)
        sol = solve_conjugate(live_run, phi, T=0.02, t_min=0.002, a=0.0)
        rep = energy_bound_check(sol)
        assert rep.finite
        assert rep.sup_energy < 10.0 * (1.0 + rep.terminal_energy)

    def test_snapshots_at_checkpoint_times(self, live_run):
        grid = live_run.grid
        phi = standard_library()[0].sample(grid)
        sol = solve_conjugate(live_run, phi, T=0.02, t_min=0.002, a=0.0)
        assert len(sol.snapshots) >= 3
        times = [t for t, _ in sol.snapshots]
        assert all(b > a for a, b in zip(times, times[1:]))


class TestKernelMass:
    def test_static_flat_mass_one(self):
        grid = GridSpec(2, 64)
        bg = BackgroundMetric.flat(grid)
        traj = constant_trajectory(MetricField.flat(grid), bg, 0.01)
        rep = kernel_mass(traj, (0.5, 0.5), T=0.01, t_min=0.0)
        assert np.max(np.abs(rep.mass_series - 1.0)) <= 1e-6
        assert rep.terminal_deviation <= 1e-12

    def test_live_background_bounded_and_terminal_one(self, live_run):
        rep = kernel_mass(live_run, (0.25, 0.75), T=0.02, t_min=0.002)
        assert np.all(np.isfinite(rep.mass_series))
        assert rep.sup_mass <= 1.5
        assert rep.terminal_deviation <= 1e-10

    def test_width_refinement(self, live_run):
        reps = [kernel_mass(live_run, (0.25, 0.75), T=0.02, t_min=0.01, width_cells=w)
                for w in (6.0, 3.0)]
        gap = np.max(np.abs(reps[0].mass_series[-1] - reps[1].mass_series[-1]))
        assert gap <= 1e-8
