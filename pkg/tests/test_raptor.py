import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffeoraptor.errors import MetricUndefinedError, StructuralError
from diffeoraptor.phantom import make_phantom
from diffeoraptor.raptor import (
    RaptorConfig,
    bin_assignment,
    patch_cr,
    patch_cr_gradient,
    patch_index,
    patch_origins,
    raptor_gradient,
    raptor_total,
    raptor_value_and_gradient,
)
from diffeoraptor.volume import Volume

TWO_BINS = RaptorConfig(num_bins=2)


def brute_cr(x, y, num_bins, x_range):
    """Correlation ratio from an explicit N x num_bins weight table."""
    x, y = np.ravel(x), np.ravel(y)
    centres = np.linspace(x_range[0], x_range[1], num_bins)
    width = centres[1] - centres[0]
    lam = np.clip(1.0 - np.abs(x[:, None] - centres[None, :]) / width, 0.0, None)
    mass = lam.sum(axis=0)
    means = np.array([lam[:, j] @ y / mass[j] if mass[j] > 0 else 0.0 for j in range(num_bins)])
    var = np.var(y)
    return (np.sum(y**2) - np.sum(mass * means**2)) / (len(y) * var)


def printed_derivative(y, state):
    """The derivative exactly as printed, with an (N - 1) sigma^2 residual denominator."""
    n = len(y)
    s2 = state.variance
    fitted = state.weights[:, 0] * state.bin_mean[state.lower_bin] + state.weights[:, 1] * state.bin_mean[state.lower_bin + 1]
    resid = np.sum(y**2) - np.sum(state.bin_mass * state.bin_mean**2)
    return 2.0 / (n * s2) * (y - fitted - (y - y.mean()) * resid / ((n - 1) * s2))


def textured(dims=32, seed=3):
    x, _ = make_phantom("sphere", dims, radius=dims / 4, texture=1.0, texture_period=12.0, seed=seed)
    return x


class TestPatch:
    def test_deterministic_relation(self):
        value, state = patch_cr([0, 0, 1, 1], [2, 2, 4, 4], TWO_BINS)
        assert value == 0.0
        np.testing.assert_allclose(state.bin_mean, [2.0, 4.0])

    def test_no_dependence(self):
        value, state = patch_cr([0, 1, 0, 1], [2, 2, 4, 4], TWO_BINS)
        assert value == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(state.bin_mean, [3.0, 3.0])

    def test_constant_y_rejected(self):
        assert patch_cr([0, 1, 2, 3], [5, 5, 5, 5], TWO_BINS) is None

    def test_constant_x_rejected(self):
        assert patch_cr([1, 1, 1, 1], [1, 2, 3, 4], TWO_BINS) is None

    def test_variance_floor(self):
        assert patch_cr([0, 1, 0, 1], [0, 1e-4, 0, 0], TWO_BINS, variance_floor=1e-6) is None

    def test_sample_count_mismatch(self):
        with pytest.raises(StructuralError):
            patch_cr([0, 1, 2], [0, 1], TWO_BINS)

    def test_matches_weight_table(self, rng):
        x = rng.uniform(0, 1, 200)
        y = np.sin(5 * x) + 0.3 * rng.normal(size=200)
        cfg = RaptorConfig(num_bins=7)
        value, _ = patch_cr(x, y, cfg, x_range=(0.0, 1.0))
        assert value == pytest.approx(brute_cr(x, y, 7, (0.0, 1.0)), abs=1e-12)

    def test_histogram_state_invariants(self, rng):
        x = rng.uniform(-2, 3, 64)
        y = rng.normal(size=64)
        _, state = patch_cr(x, y, RaptorConfig(num_bins=9))
        lam = state.bin_weight_matrix()
        np.testing.assert_allclose(lam.sum(axis=1), 1.0, atol=1e-12)
        assert state.bin_mass.sum() == pytest.approx(64, abs=1e-12)
        np.testing.assert_allclose(state.bin_mass * state.bin_mean, lam.T @ y, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 27, elements=st.floats(-5, 5)), arrays(np.float64, 27, elements=st.floats(-5, 5)),
           st.integers(2, 40))
    def test_value_in_unit_interval(self, x, y, bins):
        out = patch_cr(x, y, RaptorConfig(num_bins=bins))
        if out is not None:
            assert -1e-9 <= out[0] <= 1 + 1e-9


class TestPatchDerivative:
    def test_zero_on_deterministic_relation(self):
        y = np.array([2.0, 2.0, 4.0, 4.0])
        value, state = patch_cr([0, 0, 1, 1], y, TWO_BINS)
        np.testing.assert_allclose(patch_cr_gradient(y, value, state), 0.0, atol=1e-15)

    @pytest.mark.parametrize("ddof", [0, 1])
    def test_matches_finite_differences(self, rng, ddof):
        cfg = RaptorConfig(num_bins=8, variance_ddof=ddof)
        x = rng.uniform(0, 1, 216)
        y = x**2 + 0.5 * rng.normal(size=216)
        value, state = patch_cr(x, y, cfg, x_range=(0, 1))
        grad = patch_cr_gradient(y, value, state, ddof)
        h = 1e-6
        fd = np.empty_like(y)
        for i in range(len(y)):
            e = np.zeros_like(y)
            e[i] = h
            fd[i] = (patch_cr(x, y + e, cfg, (0, 1))[0] - patch_cr(x, y - e, cfg, (0, 1))[0]) / (2 * h)
        assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-6

    def test_printed_denominator_requires_unbiased_variance(self, rng):
        x = rng.uniform(0, 1, 216)
        y = x**2 + 0.5 * rng.normal(size=216)
        unbiased = RaptorConfig(num_bins=8, variance_ddof=1)
        value, state = patch_cr(x, y, unbiased, (0, 1))
        np.testing.assert_allclose(printed_derivative(y, state), patch_cr_gradient(y, value, state, 1), rtol=1e-12, atol=1e-15)
        population = RaptorConfig(num_bins=8, variance_ddof=0)
        value, state = patch_cr(x, y, population, (0, 1))
        exact = patch_cr_gradient(y, value, state, 0)
        assert np.linalg.norm(printed_derivative(y, state) - exact) / np.linalg.norm(exact) > 1e-3


class TestTiling:
    def test_origins_cover_the_axis(self):
        np.testing.assert_array_equal(patch_origins(20, 9, 6), [0, 6, 11])
        np.testing.assert_array_equal(patch_origins(15, 9, 6), [0, 6])
        np.testing.assert_array_equal(patch_origins(4, 9, 6), [0])

    def test_patch_index_shape(self):
        idx = patch_index((20, 15, 4), RaptorConfig())
        assert idx.shape == (3 * 2 * 1, 9 * 9 * 4)
        assert idx.max() == 20 * 15 * 4 - 1

    def test_bins_clip_to_range(self):
        lower, w = bin_assignment([-1.0, 0.0, 0.5, 1.0, 2.0], (0.0, 1.0), 3)
        np.testing.assert_array_equal(lower, [0, 0, 1, 1, 1])
        np.testing.assert_allclose(w, [0.0, 0.0, 0.0, 1.0, 1.0])


class TestVolumeMetric:
    def test_identical_smooth_phantom(self):
        x = textured()
        assert raptor_total(x, x, RaptorConfig()) <= 0.05

    def test_monotone_remap(self):
        x = textured()
        y = x.with_data(255.0 - x.data)
        assert raptor_total(x, y, RaptorConfig()) <= 0.05

    def test_independent_noise(self, rng):
        x = textured()
        y = Volume(rng.uniform(size=x.dims))
        assert raptor_total(x, y, RaptorConfig()) >= 0.8

    @pytest.mark.parametrize("a,b", [(3.0, 1.0), (-0.5, 7.0), (1e3, -2.0)])
    def test_affine_invariance(self, rng, a, b):
        x = textured(16)
        y = Volume(rng.normal(size=x.dims))
        cfg = RaptorConfig(patch_size=6, patch_stride=4)
        assert raptor_total(x, y.with_data(a * y.data + b), cfg) == pytest.approx(raptor_total(x, y, cfg), abs=1e-9)

    def test_mean_of_patch_values(self, rng):
        x = textured(16)
        y = Volume(x.data**2 + 0.2 * rng.normal(size=x.dims))
        cfg = RaptorConfig(num_bins=12, patch_size=6, patch_stride=4)
        x_range = (x.data.min(), x.data.max())
        floor = cfg.min_variance * np.ptp(y.data) ** 2
        values = []
        for idx in patch_index(x.dims, cfg):
            out = patch_cr(x.data.ravel()[idx], y.data.ravel()[idx], cfg, x_range, floor)
            if out is not None:
                values.append(out[0])
        assert raptor_total(x, y, cfg) == pytest.approx(np.mean(values), abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        x = Volume(rng.uniform(size=(10, 9, 8)))
        y = Volume(np.sin(3 * x.data) + 0.3 * rng.normal(size=x.dims))
        cfg = RaptorConfig(num_bins=6, patch_size=5, patch_stride=3)
        y_range = (y.data.min(), y.data.max())
        grad = raptor_gradient(x, y, cfg, y_range=y_range).data
        h = 1e-6
        flat = y.data.ravel()
        picks = rng.choice(flat.size, 40, replace=False)
        fd = []
        for i in picks:
            up, down = flat.copy(), flat.copy()
            up[i] += h
            down[i] -= h
            fd.append((raptor_total(x, up.reshape(x.dims), cfg, y_range=y_range)
                       - raptor_total(x, down.reshape(x.dims), cfg, y_range=y_range)) / (2 * h))
        fd = np.array(fd)
        assert np.linalg.norm(grad.ravel()[picks] - fd) / np.linalg.norm(fd) < 1e-6

    def test_everything_rejected(self):
        x = Volume(np.random.default_rng(0).uniform(size=(8, 8, 8)))
        y = Volume(np.ones((8, 8, 8)))
        with pytest.raises(MetricUndefinedError):
            raptor_total(x, y, RaptorConfig())
        assert not np.any(raptor_gradient(x, y, RaptorConfig()).data)

    def test_constant_fixed_image(self):
        with pytest.raises(MetricUndefinedError):
            raptor_value_and_gradient(np.ones((8, 8, 8)), np.random.default_rng(0).normal(size=(8, 8, 8)), RaptorConfig())

    @pytest.mark.parametrize("field,value", [("num_bins", 1), ("patch_size", 1), ("patch_stride", 0),
                                             ("min_variance", -1.0), ("variance_ddof", 2)])
    def test_config_validation(self, field, value):
        with pytest.raises(StructuralError):
            RaptorConfig(**{field: value})
