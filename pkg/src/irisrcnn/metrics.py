"""Segmentation and verification metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import IR, IX, IY, PR, PX, PY, as_dc_array


def _binary_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    for m in (a, b):
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("masks must be binary (0/1)")
    return a.astype(bool), b.astype(bool)


def iou_seg(detected_region, labelled_mask) -> float:
    """Pixel IoU between the detected double-circle region and the labelled mask.

    Two empty sets count as a perfect match (1.0).
    """
    a, b = _binary_pair(detected_region, labelled_mask)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def rasterize_double_circle(dc, height, width) -> np.ndarray:
    """``(1, H, W)`` mask of pixels whose centers are inside the iris circle and
    outside (or on) the pupil circle."""
    d = as_dc_array(dc)
    ys = np.arange(height)[:, None] + 0.5
    xs = np.arange(width)[None, :] + 0.5
    in_iris = (xs - d[IX]) ** 2 + (ys - d[IY]) ** 2 < d[IR] ** 2
    out_pupil = (xs - d[PX]) ** 2 + (ys - d[PY]) ** 2 >= d[PR] ** 2
    return (in_iris & out_pupil).astype(np.float64)[None]


def err_seg(est, label) -> float:
    """Fraction of positions where two normalized binary masks disagree."""
    a, b = _binary_pair(est, label)
    if a.size == 0:
        raise ValueError("masks are empty")
    return np.count_nonzero(a ^ b) / a.size


class RocPoint(NamedTuple):
    threshold: float
    far: float
    frr: float


@dataclass
class RocCurve:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def __len__(self):
        return len(self.thresholds)

    def __iter__(self):
        for t, a, r in zip(self.thresholds, self.far, self.frr):
            yield RocPoint(float(t), float(a), float(r))


def eer_roc(genuine, imposter) -> tuple[float, RocCurve]:
    """Equal error rate and ROC for distance scores (lower = more similar).

    A pair is accepted when its distance is ``<= threshold``; thresholds sweep
    every distinct finite distance. Infinite distances are never accepted.
    The EER is read off by linear interpolation between the two sweep points
    that bracket the FAR/FRR crossing, starting from the reject-all point.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64).ravel())
    im = np.sort(np.asarray(imposter, dtype=np.float64).ravel())
    if g.size == 0 or im.size == 0:
        raise ValueError("genuine and imposter score lists must be non-empty")
    if np.any(np.isnan(g)) or np.any(np.isnan(im)) or np.any(g < 0) or np.any(im < 0):
        raise ValueError("distances must be non-negative numbers")

    both = np.concatenate([g, im])
    thresholds = np.unique(both[np.isfinite(both)])
    far = np.searchsorted(im, thresholds, side="right") / im.size
    frr = 1.0 - np.searchsorted(g, thresholds, side="right") / g.size
    curve = RocCurve(thresholds=thresholds, far=far, frr=frr)

    far_path = np.concatenate([[0.0], far])
    frr_path = np.concatenate([[1.0], frr])
    diff = far_path - frr_path
    hit = np.nonzero(diff >= 0)[0]
    if hit.size == 0:
        # never crosses: closest approach is the accept-all-finite end
        return float(0.5 * (far_path[-1] + frr_path[-1])), curve
    k = int(hit[0])  # >= 1 since the reject-all point has diff -1
    d0, d1 = diff[k - 1], diff[k]
    alpha = -d0 / (d1 - d0)
    eer = far_path[k - 1] + alpha * (far_path[k] - far_path[k - 1])
    return float(eer), curve
