import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusflow import (
    GridSpec,
    KernelTooWide,
    ScalarField,
    Sym2Field,
    convolve,
    integrate,
    load_field,
    lp_norm,
    partial_derivative,
    save_field,
)
from torusflow.grid import field_to_csv, sym_pack, sym_unpack
from torusflow.mollify import MollifierKernel

from oracles import fit_order


def _rng_scalar(grid, seed=0):
    rng = np.random.default_rng(seed)
    return ScalarField(grid, rng.standard_normal(grid.shape))


class TestGridSpec:
    def test_spacing_exact(self):
        for n in (8, 32, 100, 256):
            g = GridSpec(2, n)
            assert g.spacing * g.resolution == 1.0

    @pytest.mark.parametrize("bad", [dict(dimension=4, resolution=16),
                                     dict(dimension=2, resolution=6),
                                     dict(dimension=2, resolution=15),
                                     dict(dimension=2, resolution=16, derivative_order=3)])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            GridSpec(**bad)


class TestDerivatives:
    def test_constant_derivative_is_zero(self):
        grid = GridSpec(2, 32)
        f = ScalarField.constant(grid, 3.7)
        for axis in range(2):
            assert np.all(partial_derivative(f, axis).values == 0.0)

    def test_sine_derivative_order4(self):
        # frozen from the analytic stencil-error oracle: the order-4 symbol
        # error for mode k is |1 - (8 sin kh - sin 2kh)/(6kh)|, which at
        # N = 64 gives 3.0918e-6 relative, 1.9427e-5 absolute on 2*pi*cos
        grid = GridSpec(2, 64, derivative_order=4)
        x1 = grid.meshes()[0]
        f = ScalarField(grid, np.sin(2 * np.pi * x1))
        exact = 2 * np.pi * np.cos(2 * np.pi * x1)
        err = np.max(np.abs(partial_derivative(f, 0).values - exact))
        assert err == pytest.approx(1.9427e-5, rel=1e-3)
        assert err / (2 * np.pi) <= 1e-5

    def test_sine_no_dependence_axis(self):
        grid = GridSpec(2, 32)
        f = ScalarField(grid, np.sin(2 * np.pi * grid.meshes()[0]))
        assert np.all(partial_derivative(f, 1).values == 0.0)

    @pytest.mark.parametrize("order,min_order", [(2, 1.8), (4, 3.8)])
    def test_refinement_order(self, order, min_order):
        errs, dxs = [], []
        for n in (16, 32, 64, 128):
            grid = GridSpec(2, n, derivative_order=order)
            x1, x2 = grid.meshes()
            f = ScalarField(grid, np.sin(2 * np.pi * x1) * np.cos(4 * np.pi * x2))
            exact = 2 * np.pi * np.cos(2 * np.pi * x1) * np.cos(4 * np.pi * x2)
            errs.append(np.max(np.abs(partial_derivative(f, 0).values - exact)))
            dxs.append(grid.spacing)
        assert fit_order(dxs, errs) >= min_order

    @given(seed=st.integers(0, 2**31), axis=st.integers(0, 1), shift=st.integers(1, 7))
    @settings(max_examples=25, deadline=None)
    def test_translation_commutes_exactly(self, seed, axis, shift):
        grid = GridSpec(2, 16)
        f = _rng_scalar(grid, seed)
        shifted = ScalarField(grid, np.roll(f.values, shift, axis=axis))
        d_then_shift = np.roll(partial_derivative(f, axis).values, shift, axis=axis)
        shift_then_d = partial_derivative(shifted, axis).values
        assert np.array_equal(d_then_shift, shift_then_d)

    @given(seed=st.integers(0, 2**31), axis=st.integers(0, 1))
    @settings(max_examples=25, deadline=None)
    def test_discrete_divergence_theorem(self, seed, axis):
        grid = GridSpec(2, 24)
        f = _rng_scalar(grid, seed)
        total = integrate(partial_derivative(f, axis))
        assert abs(total) <= 1e-12 * (1.0 + np.max(np.abs(f.values)))


class TestQuadrature:
    def test_unit_torus_volume(self):
        grid = GridSpec(2, 16)
        assert integrate(ScalarField.constant(grid, 1.0), ScalarField.constant(grid, 1.0)) == 1.0

    def test_mean_zero_mode(self):
        grid = GridSpec(2, 32)
        f = ScalarField(grid, np.sin(2 * np.pi * grid.meshes()[0]))
        assert abs(integrate(f)) <= 1e-12

    def test_sin_squared(self):
        grid = GridSpec(2, 32)
        f = ScalarField(grid, np.sin(2 * np.pi * grid.meshes()[0]) ** 2)
        assert integrate(f) == pytest.approx(0.5, abs=1e-10)


class TestLpNorm:
    def test_zero_and_constant(self):
        grid = GridSpec(2, 16)
        assert lp_norm(ScalarField.constant(grid, 0.0), 2) == 0.0
        for p in (1.0, 2.0, 3.5, np.inf):
            assert lp_norm(ScalarField.constant(grid, 1.0), p) == pytest.approx(1.0, abs=1e-13)

    def test_sine_l2(self):
        grid = GridSpec(2, 64)
        f = ScalarField(grid, np.sin(2 * np.pi * grid.meshes()[0]))
        assert lp_norm(f, 2) == pytest.approx(np.sqrt(0.5), abs=1e-10)

    def test_p_below_one_rejected(self):
        grid = GridSpec(2, 16)
        with pytest.raises(ValueError):
            lp_norm(ScalarField.constant(grid, 1.0), 0.5)


class TestConvolve:
    def test_constants_preserved(self):
        grid = GridSpec(2, 64)
        kern = MollifierKernel(grid, 0.1)
        f = ScalarField.constant(grid, 2.5)
        assert np.max(np.abs(convolve(f, kern).values - 2.5)) <= 1e-13

    def test_nonnegativity_exact(self):
        grid = GridSpec(2, 64)
        kern = MollifierKernel(grid, 0.1)
        rng = np.random.default_rng(7)
        f = ScalarField(grid, np.maximum(rng.standard_normal(grid.shape), 0.0))
        assert convolve(f, kern).values.min() >= 0.0

    def test_kernel_too_wide(self):
        grid = GridSpec(2, 64)
        with pytest.raises(KernelTooWide):
            MollifierKernel(grid, 0.25)

    def test_kernel_unit_mass(self):
        grid = GridSpec(2, 64)
        kern = MollifierKernel(grid, 0.1)
        assert integrate(kern.samples) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
    def test_young_inequality(self, p):
        grid = GridSpec(2, 64)
        kern = MollifierKernel(grid, 0.08)
        f = _rng_scalar(grid, 3)
        assert lp_norm(convolve(f, kern), p) <= lp_norm(f, p) + 1e-12


class TestSymPacking:
    @pytest.mark.parametrize("n", [2, 3])
    def test_roundtrip(self, n):
        rng = np.random.default_rng(1)
        mat = rng.standard_normal((4, 4, n, n)) if n == 2 else rng.standard_normal((4, 4, 4, n, n))
        mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
        assert np.array_equal(sym_unpack(sym_pack(mat, n), n), mat)


class TestSerialization:
    def test_binary_roundtrip(self, tmp_path):
        grid = GridSpec(2, 16)
        f = Sym2Field(grid, np.random.default_rng(0).standard_normal(grid.shape + (3,)))
        path = tmp_path / "field.bin"
        save_field(f, path)
        back = load_field(path)
        assert type(back) is Sym2Field
        assert np.array_equal(back.values, f.values)

    def test_csv_written(self, tmp_path):
        grid = GridSpec(2, 8)
        f = ScalarField.constant(grid, 1.0)
        path = tmp_path / "field.csv"
        field_to_csv(f, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# schema:")
        assert lines[1] == "x1,x2,value"
        assert len(lines) == 2 + 64
