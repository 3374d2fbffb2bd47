import numpy as np
import pytest

from torusflow import (
    BackgroundMetric,
    GridSpec,
    MetricField,
    SingularMetricSpec,
    SpecInfeasible,
    UnresolvedCutoff,
    build_cutoffs,
    classical_curvature,
    make_singular_metric,
    verify_distributional_floor,
)
from torusflow.geometry import covariant_metric_derivative
from torusflow.grid import lp_norm
from torusflow.testfunctions import _radial_bump, standard_library

CENTER = (0.31, 0.47)


class TestSingularMetricSpec:
    def test_p_max_cone_point(self):
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        assert spec.p_max(2) == pytest.approx(4.0)

    def test_p_max_stripe_infinite(self):
        spec = SingularMetricSpec("interface_stripe", amplitude=0.1, center=(0.5,))
        assert spec.p_max(2) == np.inf

    def test_infeasible_circle(self):
        # a circle in T^3 with alpha <= 1/3 leaves p_max <= n
        spec = SingularMetricSpec("cone_circle", amplitude=0.1, alpha=0.3, center=(0.5, 0.5))
        with pytest.raises(SpecInfeasible):
            make_singular_metric(spec, GridSpec(3, 16))

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError):
            SingularMetricSpec("blob", amplitude=0.1)


class TestMakeSingularMetric:
    def test_flat_stripe(self):
        spec = SingularMetricSpec("interface_stripe", amplitude=0.0, center=(0.5,))
        g, a_floor = make_singular_metric(spec, GridSpec(2, 64))
        assert np.max(np.abs(g.g.values - MetricField.flat(g.grid).g.values)) == 0.0
        assert a_floor == 0.0

    def test_cone_a_floor_finite_negative(self):
        # frozen from the refined-grid curvature oracle at N = 128
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        g, a_floor = make_singular_metric(spec, GridSpec(2, 128))
        assert np.isfinite(a_floor)
        assert a_floor == pytest.approx(-20.7304, abs=0.02)

    def test_a_floor_converges_under_refinement(self):
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        floors = [make_singular_metric(spec, GridSpec(2, n))[1] for n in (64, 128, 256)]
        assert abs(floors[2] - floors[1]) < abs(floors[1] - floors[0])

    def test_metric_continuous_on_sigma(self):
        # u -> 0 at the cone point: the sampled metric equals the identity there
        spec = SingularMetricSpec("cone_point", amplitude=0.4, alpha=0.5, center=(0.5, 0.5))
        g, _ = make_singular_metric(spec, GridSpec(2, 64))
        i = j = 32  # grid point exactly at the center
        assert g.g.values[i, j, 0] == pytest.approx(1.0, abs=1e-14)
        assert g.g.values[i, j, 1] == 0.0

    def test_uniformly_elliptic(self):
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        g, _ = make_singular_metric(spec, GridSpec(2, 128))
        lam, Lam = g.ellipticity
        assert lam > 0.5 and Lam < 2.0


class TestIntegrabilityThreshold:
    def test_lp_below_threshold_stable_above_grows(self):
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        p_mid = (2.0 + spec.p_max(2)) / 2.0
        p_hi = spec.p_max(2) + 1.0
        mids, highs = [], []
        for n in (64, 128, 256):
            grid = GridSpec(2, n)
            g, _ = make_singular_metric(spec, grid)
            dg = covariant_metric_derivative(g, BackgroundMetric.flat(grid))
            mids.append(lp_norm(dg, p_mid))
            highs.append(lp_norm(dg, p_hi))
        # below threshold: Cauchy-like increments shrink under doubling
        assert abs(mids[2] - mids[1]) < abs(mids[1] - mids[0])
        # above threshold: strictly growing without sign of saturation
        assert highs[0] < highs[1] < highs[2]


class TestCutoffs:
    def test_point_decay_matches_closed_form(self):
        grid = GridSpec(2, 256)
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        eps = [0.2 / 2 ** (k / 2) for k in range(7)]
        fam = build_cutoffs(spec, eps, q=1.5, grid=grid)
        assert all(b < a for a, b in zip(fam.gradient_integrals, fam.gradient_integrals[1:]))
        assert fam.decay_exponent_closed_form == pytest.approx(0.5)
        assert abs(fam.fitted_exponent() - 0.5) <= 0.3
        assert fam.applicable

    def test_eta_range_and_support(self):
        grid = GridSpec(2, 256)
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        fam = build_cutoffs(spec, [0.1], q=1.5, grid=grid)
        eta = fam.etas[0].values
        d = spec.distance_values(grid)
        assert eta.min() >= 0.0 and eta.max() <= 1.0
        assert np.all(eta[d <= 0.05 - grid.spacing] == 1.0)   # 1 near Sigma
        assert np.all(eta[d >= 0.1] == 0.0)                   # supported in B_eps

    def test_stripe_q1_not_applicable(self):
        grid = GridSpec(2, 256)
        stripe = SingularMetricSpec("interface_stripe", amplitude=0.05, center=(0.5,))
        fam = build_cutoffs(stripe, [0.2, 0.1, 0.05], q=1.0, grid=grid)
        assert not fam.applicable
        # integrals neither decay: flat in eps for a codimension-1 set
        vals = np.asarray(fam.gradient_integrals)
        assert np.max(vals) / np.min(vals) < 1.25

    def test_unresolved_radius_rejected(self):
        grid = GridSpec(2, 64)
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        with pytest.raises(UnresolvedCutoff):
            build_cutoffs(spec, [6.0 * grid.spacing], q=1.5, grid=grid)


class TestDistributionalFloor:
    def test_flat_zero(self):
        grid = GridSpec(2, 64)
        rep = verify_distributional_floor(MetricField.flat(grid), BackgroundMetric.flat(grid), 0.0)
        assert rep.violation <= 1e-12

    def test_smooth_metric_at_its_minimum(self):
        grid = GridSpec(2, 128)
        u = 0.1 * np.sin(2 * np.pi * grid.meshes()[0]) * np.sin(2 * np.pi * grid.meshes()[1])
        g = MetricField.conformal_flat(grid, u)
        bg = BackgroundMetric.flat(grid)
        scal = classical_curvature(g, want_riemann=False).scalar.values
        a = float(scal.min())
        argmin = np.unravel_index(np.argmin(scal), scal.shape)
        center = tuple(idx * grid.spacing for idx in argmin)
        lib = standard_library() + [_radial_bump(center=center, radius=0.08)]
        rep = verify_distributional_floor(g, bg, a, library=lib)
        assert rep.violation <= 5e-3
        # the concentrated bump nearly saturates the floor
        concentrated = rep.rows[-1]["slack"]
        assert abs(concentrated) <= 0.05 * (1.0 + abs(a))

    def test_cone_floor_holds_and_tightens(self):
        spec = SingularMetricSpec("cone_point", amplitude=0.2, alpha=0.5, center=CENTER)
        violations = []
        for n in (64, 128, 256):
            grid = GridSpec(2, n)
            g, a_floor = make_singular_metric(spec, grid)
            rep = verify_distributional_floor(g, BackgroundMetric.flat(grid), a_floor,
                                              sigma=spec, tol=0.05 * abs(a_floor))
            assert rep.passed
            violations.append(rep.violation)
            assert {"near", "far"} <= set(rep.rows[0])
        assert all(b <= a * 1.05 + 1e-15 for a, b in zip(violations, violations[1:]))

    def test_negative_stripe_breaks_floor(self):
        # downward kink concentrates negative curvature on the interface:
        # the pointwise floor away from Sigma does NOT transfer
        grid = GridSpec(2, 256)
        spec = SingularMetricSpec("interface_stripe", amplitude=-0.05, center=(0.5,))
        g, a_floor = make_singular_metric(spec, grid)
        rep = verify_distributional_floor(g, BackgroundMetric.flat(grid), a_floor, sigma=spec)
        assert rep.violation > 0.05

    def test_positive_stripe_keeps_floor(self):
        grid = GridSpec(2, 256)
        spec = SingularMetricSpec("interface_stripe", amplitude=0.05, center=(0.5,))
        g, a_floor = make_singular_metric(spec, grid)
        rep = verify_distributional_floor(g, BackgroundMetric.flat(grid), a_floor, sigma=spec)
        assert rep.violation <= 1e-6
