import numpy as np
import pytest

from torusflow import GridSpec
from torusflow.testfunctions import standard_library, w1q_norm


class TestLibrary:
    def test_all_nonnegative_and_smooth_sampled(self):
        grid = GridSpec(2, 64)
        for u in standard_library():
            f = u.sample(grid)
            assert f.values.min() >= 0.0
            assert np.all(np.isfinite(f.values))

    def test_constant_norm_exact(self):
        # ||1||_{W^{1,2}} = (Int 1)^{1/2} = 1 on the unit torus
        one = standard_library()[0]
        assert one.w1q_norm(2) == pytest.approx(1.0, abs=1e-12)

    def test_axis_bump_norm_closed_form(self):
        # u = (1+sin)/2: Int u^2 = 3/8, Int |grad u|^2 = pi^2/2
        u = standard_library()[1]
        exact = (3.0 / 8.0 + np.pi**2 / 2.0) ** 0.5
        assert u.w1q_norm(2) == pytest.approx(exact, rel=1e-10)

    def test_norm_cached_and_dimension_dependent(self):
        u = standard_library()[1]
        n2 = w1q_norm(u, 2)
        n3 = w1q_norm(u, 3)
        assert n2 != n3
        assert w1q_norm(u, 2) == n2

    def test_radial_bump_support(self):
        grid = GridSpec(2, 128)
        bump = standard_library()[4]
        f = bump.sample(grid).values
        x1, x2 = grid.meshes()
        d = np.sqrt((x1 - 0.5) ** 2 + (x2 - 0.5) ** 2)
        assert np.all(f[d >= 0.25] == 0.0)
        assert f.max() == pytest.approx(1.0, abs=1e-12)
