import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irisrcnn.matcher import (
    MaskedFeatureMap,
    masked_distance,
    pairwise_shifted_distances,
    shifted_distance,
)


def random_map(rng, c=1, h=4, w=16, p=0.8):
    return MaskedFeatureMap(rng.normal(size=(c, h, w)), (rng.random((1, h, w)) < p).astype(float))


class TestMaskedDistance:
    def test_self_is_zero(self):
        m = random_map(np.random.default_rng(0))
        assert masked_distance(m, m) == 0.0

    def test_disjoint_masks_infinite(self):
        f = np.zeros((1, 1, 4))
        a = MaskedFeatureMap(f, np.array([[[1, 1, 0, 0]]], float))
        b = MaskedFeatureMap(f, np.array([[[0, 0, 1, 1]]], float))
        assert masked_distance(a, b) == np.inf

    def test_hand_example(self):
        ones = np.ones((1, 1, 2))
        a = MaskedFeatureMap(np.array([[[1.0, 2.0]]]), ones)
        b = MaskedFeatureMap(np.array([[[2.0, 4.0]]]), ones)
        assert masked_distance(a, b) == pytest.approx(2.5)

    def test_channels_summed_per_location(self):
        ones = np.ones((1, 1, 1))
        a = MaskedFeatureMap(np.array([[[0.0]], [[0.0]]]), ones)
        b = MaskedFeatureMap(np.array([[[1.0]], [[2.0]]]), ones)
        assert masked_distance(a, b) == pytest.approx(5.0)

    def test_shape_errors(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError):
            masked_distance(random_map(rng, w=8), random_map(rng, w=9))
        with pytest.raises(ValueError):
            MaskedFeatureMap(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))

    @settings(max_examples=50)
    @given(st.integers(0, 10_000), st.floats(0.1, 10))
    def test_properties(self, seed, k):
        rng = np.random.default_rng(seed)
        a, b = random_map(rng, c=2), random_map(rng, c=2)
        d = masked_distance(a, b)
        assert d == masked_distance(b, a) and d >= 0
        scaled = masked_distance(
            MaskedFeatureMap(a.features * k, a.mask), MaskedFeatureMap(b.features * k, b.mask)
        )
        if np.isfinite(d):
            assert scaled == pytest.approx(k * k * d, rel=1e-9)
        # values under a zero mask never matter
        noisy = a.features.copy()
        noisy[:, a.mask[0] == 0] = rng.normal(size=(2, int((a.mask[0] == 0).sum())))
        assert masked_distance(MaskedFeatureMap(noisy, a.mask), b) == d


class TestShiftedDistance:
    def test_zero_shift_is_plain(self):
        rng = np.random.default_rng(2)
        a, b = random_map(rng), random_map(rng)
        assert shifted_distance(a, b, 0) == masked_distance(a, b)

    def test_recovers_rotation(self):
        a = random_map(np.random.default_rng(3))
        assert shifted_distance(a, a.shifted(3), 3) == 0.0
        assert shifted_distance(a, a.shifted(-3), 5) == 0.0
        assert shifted_distance(a, a.shifted(3), 2) > 0.0

    def test_precondition(self):
        a = random_map(np.random.default_rng(4), w=8)
        with pytest.raises(ValueError):
            shifted_distance(a, a, 8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 6))
    def test_properties(self, seed, s):
        rng = np.random.default_rng(seed)
        a, b = random_map(rng), random_map(rng)
        assert shifted_distance(a, b, s) <= masked_distance(a, b)
        assert shifted_distance(a, b, s) == pytest.approx(shifted_distance(b, a, s))


class TestPairwise:
    def test_matches_loop(self):
        rng = np.random.default_rng(5)
        maps = [random_map(rng, c=2, p=0.6) for _ in range(6)]
        empty = MaskedFeatureMap(np.zeros((2, 4, 16)), np.zeros((1, 4, 16)))
        maps.append(empty)
        got = pairwise_shifted_distances(maps, 3)
        for i in range(len(maps)):
            for j in range(len(maps)):
                want = shifted_distance(maps[i], maps[j], 3)
                if np.isinf(want):
                    assert np.isinf(got[i, j])
                else:
                    assert got[i, j] == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_empty_input(self):
        assert pairwise_shifted_distances([], 2).shape == (0, 0)
