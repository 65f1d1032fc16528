import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numeric_grad, rel_error
from irisrcnn.geometry import Circle, DoubleCircle
from irisrcnn.rubbersheet import (
    BilinearSampler,
    RoiNormalizer,
    polar_grid,
    polar_sample_point,
    roi_normalize,
    unwrap,
    unwrap_mask,
)


def dc(ix, iy, ir, px, py, pr):
    return DoubleCircle(Circle(ix, iy, ir), Circle(px, py, pr))


def pixel_centers(h, w):
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    return xs, ys


def smooth_texture(h, w, cx, cy, angle=0.0):
    """Band-limited polar texture, optionally rotated by ``angle`` about (cx, cy)."""
    xs, ys = pixel_centers(h, w)
    r = np.hypot(xs - cx, ys - cy)
    phi = np.arctan2(ys - cy, xs - cx) - angle
    return (
        0.5
        + 0.2 * np.cos(3 * phi + r / 15)
        + 0.15 * np.sin(5 * phi) * np.cos(r / 20)
        + 0.1 * np.cos(2 * phi - 1.0)
    )[None]


class TestPolarSamplePoint:
    def test_midpoint(self):
        assert polar_sample_point(dc(0, 0, 20, 0, 0, 10), 0.5, 0.0) == pytest.approx((15, 0))

    def test_non_concentric(self):
        x, y = polar_sample_point(dc(0, 0, 20, 2, 0, 10), 1.0, np.pi / 2)
        assert x == pytest.approx(0, abs=1e-12) and y == pytest.approx(20)

    @given(st.floats(0, 2 * np.pi))
    def test_rho_zero_on_pupil(self, theta):
        d = dc(3, 4, 30, 5, 2, 8)
        x, y = polar_sample_point(d, 0.0, theta)
        assert np.hypot(x - 5, y - 2) == pytest.approx(8)

    def test_grid_layout(self):
        xs, ys = polar_grid(dc(0, 0, 20, 0, 0, 10), 4, 8)
        assert xs.shape == (4, 8)
        # first row sits at rho = 1/8, column 0 at theta = 0
        assert xs[0, 0] == pytest.approx(10 + 10 / 8) and ys[0, 0] == pytest.approx(0)
        assert ys[0, 2] == pytest.approx(10 + 10 / 8)


class TestUnwrap:
    def test_constant_source(self):
        out = unwrap(np.full((2, 40, 50), 0.3), dc(25, 20, 15, 25, 20, 5), 8, 16)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-15)
        assert (out.out_h, out.out_w) == (8, 16)

    def test_radial_source_rows_constant(self):
        h = w = 400
        xs, ys = pixel_centers(h, w)
        src = np.cos(np.hypot(xs - 200, ys - 200) / 40.0)[None]
        out = unwrap(src, dc(200, 200, 150, 200, 200, 40), 64, 512).data[0]
        assert np.max(np.ptp(out, axis=1)) < 5e-3

    def test_outside_reads_zero(self):
        out = unwrap(np.ones((1, 10, 10)), dc(500, 500, 20, 500, 500, 5), 4, 8)
        np.testing.assert_array_equal(out.data, 0)

    @pytest.mark.parametrize("s", [1, 7, 64])
    def test_rotation_equivariance(self, s):
        h = w = 256
        d = dc(128, 128, 100, 128, 128, 30)
        base = unwrap(smooth_texture(h, w, 128, 128), d, 64, 512).data
        rotated = unwrap(smooth_texture(h, w, 128, 128, 2 * np.pi * s / 512), d, 64, 512).data
        assert np.max(np.abs(rotated - np.roll(base, s, axis=-1))) < 0.05

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_values_within_source_range(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.random((1, 60, 60))
        d = dc(30, 30, rng.uniform(10, 25), 30 + rng.uniform(-2, 2), 30, rng.uniform(2, 8))
        out = unwrap(src, d, 8, 32).data
        assert out.min() >= src.min() - 1e-12 and out.max() <= src.max() + 1e-12

    def test_rejects_non_finite(self):
        src = np.zeros((1, 5, 5))
        src[0, 2, 2] = np.nan
        with pytest.raises(ValueError):
            unwrap(src, dc(2, 2, 2, 2, 2, 1), 2, 2)


class TestUnwrapMask:
    def test_constants(self):
        d = dc(20, 20, 15, 20, 20, 5)
        np.testing.assert_array_equal(unwrap_mask(np.ones((1, 40, 40)), d, 8, 32).data, 1)
        np.testing.assert_array_equal(unwrap_mask(np.zeros((1, 40, 40)), d, 8, 32).data, 0)

    def test_half_plane(self):
        h = w = 200
        _, ys = pixel_centers(h, w)
        # theta in (0, pi) points towards +y, i.e. the lower image half
        mask = (ys > 100).astype(float)[None]
        out = unwrap_mask(mask, dc(100, 100, 80, 100, 100, 20), 16, 64).data[0]
        theta = 2 * np.pi * np.arange(64) / 64
        expected = ((theta > 0) & (theta < np.pi)).astype(float)
        wrong = np.nonzero(np.any(out != expected[None], axis=0))[0]
        assert len(wrong) <= 2  # boundary columns at theta = 0 and pi

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_output_binary(self, seed):
        rng = np.random.default_rng(seed)
        mask = (rng.random((1, 30, 30)) < 0.5).astype(float)
        out = unwrap_mask(mask, dc(15, 15, 12, 15, 15, 4), 8, 16).data
        assert set(np.unique(out)) <= {0.0, 1.0}

    def test_rejects_soft_mask(self):
        with pytest.raises(ValueError):
            unwrap_mask(np.full((1, 4, 4), 0.5), dc(2, 2, 2, 2, 2, 1), 2, 2)


class TestRoiNormalize:
    def test_unit_stride_equals_unwrap(self):
        rng = np.random.default_rng(0)
        f = rng.random((3, 30, 40))
        d = dc(20, 15, 12, 21, 15, 4)
        np.testing.assert_array_equal(roi_normalize(f, d, 1, 7, 7), unwrap(f, d, 7, 7).data)

    def test_constant_features(self):
        out = roi_normalize(np.full((4, 16, 16), 2.0), dc(32, 32, 20, 32, 32, 6), 4, 7, 7)
        assert out.shape == (4, 7, 7)
        np.testing.assert_allclose(out, 2.0)

    def test_scale_consistency(self):
        h = w = 256
        img = smooth_texture(h, w, 128, 128)
        half = img.reshape(1, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
        d = dc(128, 128, 90, 130, 126, 30)
        full = roi_normalize(img, d, 1, 16, 32)
        coarse = roi_normalize(half, d, 2, 16, 32)
        assert np.max(np.abs(full - coarse)) < 0.1

    def test_batched_matches_single(self):
        rng = np.random.default_rng(1)
        f = rng.random((2, 20, 20))
        rois = np.array([[40, 40, 30, 40, 40, 10], [35, 42, 20, 36, 41, 7]], float)
        pool = RoiNormalizer(rois, f.shape, 4, 7, 7)
        out = pool.forward(f)
        assert out.shape == (2, 2, 7, 7)
        for i in range(2):
            np.testing.assert_allclose(out[i], roi_normalize(f, rois[i], 4, 7, 7))

    def test_backward_is_adjoint(self):
        rng = np.random.default_rng(2)
        f = rng.random((2, 12, 12))
        rois = np.array([[24, 24, 20, 25, 23, 6], [20, 26, 14, 20, 26, 4]], float)
        pool = RoiNormalizer(rois, f.shape, 4, 7, 7)
        g = rng.normal(size=(2, 2, 7, 7))
        analytic = pool.backward(g)
        numeric = numeric_grad(lambda: float(np.sum(pool.forward(f) * g)), f)
        assert rel_error(analytic, numeric) < 1e-6

    def test_sampler_shape_check(self):
        s = BilinearSampler(np.zeros(3), np.zeros(3), 4, 4)
        with pytest.raises(ValueError):
            s.sample(np.zeros((1, 5, 5)))
