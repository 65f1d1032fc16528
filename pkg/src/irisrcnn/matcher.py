"""Masked fractional Euclidean distance between normalized feature maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MaskedFeatureMap:
    features: np.ndarray  # (C, h, w)
    mask: np.ndarray  # (1, h, w), binary

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.features.ndim == 2:
            self.features = self.features[None]
        if self.mask.ndim == 2:
            self.mask = self.mask[None]
        if self.features.ndim != 3 or self.mask.shape != (1,) + self.features.shape[1:]:
            raise ValueError(
                f"features {self.features.shape} and mask {self.mask.shape} disagree spatially"
            )

    def shifted(self, s: int) -> "MaskedFeatureMap":
        """Circular shift by ``s`` columns (the angular axis)."""
        return MaskedFeatureMap(np.roll(self.features, s, axis=-1), np.roll(self.mask, s, axis=-1))


def masked_distance(a: MaskedFeatureMap, b: MaskedFeatureMap) -> float:
    """Mean over jointly valid locations of the channel-summed squared difference.

    Returns ``inf`` when the two masks share no valid location.
    """
    if a.features.shape != b.features.shape:
        raise ValueError(f"shape mismatch: {a.features.shape} vs {b.features.shape}")
    phi = (a.mask[0] != 0) & (b.mask[0] != 0)
    n = np.count_nonzero(phi)
    if n == 0:
        return float("inf")
    diff = a.features[:, phi] - b.features[:, phi]
    return float(np.sum(diff * diff) / n)


def shifted_distance(a: MaskedFeatureMap, b: MaskedFeatureMap, max_shift: int = 8) -> float:
    """Minimum masked distance over circular column shifts of ``b`` in ``[-max_shift, max_shift]``."""
    w = a.features.shape[-1]
    if not 0 <= max_shift < w:
        raise ValueError(f"max_shift must lie in [0, {w})")
    return min(masked_distance(a, b.shifted(s)) for s in range(-max_shift, max_shift + 1))


def pairwise_shifted_distances(maps: list[MaskedFeatureMap], max_shift: int = 8) -> np.ndarray:
    """All-pairs :func:`shifted_distance` as an ``(n, n)`` matrix.

    Expands the squared difference into mask-weighted correlations so each
    shift costs a handful of matrix products instead of n^2 map comparisons.
    Entry ``[i, j]`` equals ``shifted_distance(maps[i], maps[j], max_shift)``
    up to floating-point rounding.
    """
    if not maps:
        return np.zeros((0, 0))
    shape = maps[0].features.shape
    if any(m.features.shape != shape for m in maps):
        raise ValueError("all feature maps must share one shape")
    w = shape[-1]
    if not 0 <= max_shift < w:
        raise ValueError(f"max_shift must lie in [0, {w})")
    n = len(maps)
    mask = np.stack([(m.mask[0] != 0).astype(np.float64) for m in maps])  # (n, h, w)
    feats = np.stack([m.features for m in maps])  # (n, C, h, w)
    sq = (feats * feats).sum(axis=1) * mask  # (n, h, w)
    mf = feats * mask[:, None]  # (n, C, h, w)

    best = np.full((n, n), np.inf)
    m_flat, sq_flat, mf_flat = mask.reshape(n, -1), sq.reshape(n, -1), mf.reshape(n, -1)
    for s in range(-max_shift, max_shift + 1):
        m_s = np.roll(mask, s, axis=-1).reshape(n, -1)
        sq_s = np.roll(sq, s, axis=-1).reshape(n, -1)
        mf_s = np.roll(mf, s, axis=-1).reshape(n, -1)
        count = m_flat @ m_s.T
        total = sq_flat @ m_s.T + m_flat @ sq_s.T - 2.0 * (mf_flat @ mf_s.T)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(count > 0, np.maximum(total, 0.0) / np.maximum(count, 1), np.inf)
        np.minimum(best, d, out=best)
    return best
