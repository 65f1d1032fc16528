"""Circles, double circles, anchors, regression transforms and IoU.

Double circles are carried around as float arrays of shape ``(..., 6)`` laid
out as ``(x_iris, y_iris, x_pupil, y_pupil, r_iris, r_pupil)``. The
:class:`Circle` and :class:`DoubleCircle` dataclasses are the scalar,
user-facing form; every vectorized function also accepts them.

Image coordinates are continuous: pixel ``(row, col)`` covers
``[col, col + 1) x [row, row + 1)`` so its center sits at
``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IX, IY, PX, PY, IR, PR = range(6)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"circle radius must be positive, got {self.r}")


@dataclass(frozen=True)
class DoubleCircle:
    """Iris (outer) and pupil (inner) boundary circles."""

    iris: Circle
    pupil: Circle

    def __post_init__(self):
        if not self.iris.r > self.pupil.r:
            raise ValueError(
                f"iris radius ({self.iris.r}) must exceed pupil radius ({self.pupil.r})"
            )

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.iris.cx, self.iris.cy, self.pupil.cx, self.pupil.cy, self.iris.r, self.pupil.r],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, values) -> "DoubleCircle":
        v = [float(x) for x in np.asarray(values, dtype=np.float64).reshape(6)]
        return cls(Circle(v[IX], v[IY], v[IR]), Circle(v[PX], v[PY], v[PR]))

    def to_dict(self) -> dict:
        return {
            "iris": {"cx": self.iris.cx, "cy": self.iris.cy, "r": self.iris.r},
            "pupil": {"cx": self.pupil.cx, "cy": self.pupil.cy, "r": self.pupil.r},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DoubleCircle":
        i, p = d["iris"], d["pupil"]
        return cls(
            Circle(float(i["cx"]), float(i["cy"]), float(i["r"])),
            Circle(float(p["cx"]), float(p["cy"]), float(p["r"])),
        )


def as_dc_array(x) -> np.ndarray:
    """Coerce a DoubleCircle, a sequence of them, or an array-like to ``(..., 6)``."""
    if isinstance(x, DoubleCircle):
        return x.to_array()
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], DoubleCircle):
        return np.stack([d.to_array() for d in x])
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1:] != (6,):
        raise ValueError(f"double circles need a trailing dimension of 6, got shape {arr.shape}")
    return arr


def _circle_array(c) -> np.ndarray:
    if isinstance(c, Circle):
        return np.array([c.cx, c.cy, c.r], dtype=np.float64)
    arr = np.asarray(c, dtype=np.float64)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"circles need a trailing dimension of 3, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Anchors and the regression transform
# ---------------------------------------------------------------------------


def anchor_grid(feat_w, feat_h, stride, radii, ratios) -> np.ndarray:
    """Concentric double-circle anchors for every feature-map cell.

    Returns an array of shape ``(feat_w * feat_h * len(radii) * len(ratios), 6)``.
    Cells are enumerated row-major (``y`` outer, ``x`` inner), then by iris
    radius, then by pupil/iris ratio, matching the channel layout of the
    proposal head.
    """
    radii = np.asarray(radii, dtype=np.float64).ravel()
    ratios = np.asarray(ratios, dtype=np.float64).ravel()
    if radii.size == 0 or ratios.size == 0:
        raise ValueError("anchor radii and ratios must be non-empty")
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("anchor radii must be positive and strictly ascending")
    if np.any(ratios <= 0) or np.any(ratios >= 1):
        raise ValueError("anchor ratios must lie in (0, 1)")
    if not stride > 0:
        raise ValueError("stride must be positive")
    if int(feat_w) < 1 or int(feat_h) < 1:
        raise ValueError("feature map must be at least 1x1")

    ys, xs = np.meshgrid(
        (np.arange(int(feat_h)) + 0.5) * stride,
        (np.arange(int(feat_w)) + 0.5) * stride,
        indexing="ij",
    )
    r_iris = np.repeat(radii, ratios.size)
    r_pupil = (radii[:, None] * ratios[None, :]).ravel()
    k = r_iris.size
    n_cells = xs.size

    out = np.empty((n_cells, k, 6))
    out[:, :, IX] = xs.reshape(-1, 1)
    out[:, :, IY] = ys.reshape(-1, 1)
    out[:, :, PX] = xs.reshape(-1, 1)
    out[:, :, PY] = ys.reshape(-1, 1)
    out[:, :, IR] = r_iris
    out[:, :, PR] = r_pupil
    return out.reshape(-1, 6)


def encode(anchor, gt) -> np.ndarray:
    """Regression targets ``(tx_i, ty_i, tx_p, ty_p, tr_i, tr_p)`` mapping anchor onto gt."""
    a = as_dc_array(anchor)
    g = as_dc_array(gt)
    if np.any(a[..., IR:] <= 0) or np.any(g[..., IR:] <= 0):
        raise ValueError("encode requires strictly positive radii")
    a, g = np.broadcast_arrays(a, g)
    t = np.empty(a.shape)
    t[..., 0] = (g[..., IX] - a[..., IX]) / a[..., IR]
    t[..., 1] = (g[..., IY] - a[..., IY]) / a[..., IR]
    t[..., 2] = (g[..., PX] - a[..., PX]) / a[..., PR]
    t[..., 3] = (g[..., PY] - a[..., PY]) / a[..., PR]
    t[..., 4] = np.log(g[..., IR] / a[..., IR])
    t[..., 5] = np.log(g[..., PR] / a[..., PR])
    return t


def decode(anchor, t) -> np.ndarray:
    """Apply regression offsets to anchors. No iris/pupil ordering is enforced."""
    a = as_dc_array(anchor)
    t = np.asarray(t, dtype=np.float64)
    if t.shape[-1:] != (6,):
        raise ValueError(f"regression targets need a trailing dimension of 6, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("regression targets must be finite")
    if np.any(a[..., IR:] <= 0):
        raise ValueError("decode requires strictly positive anchor radii")
    a, t = np.broadcast_arrays(a, t)
    out = np.empty(a.shape)
    out[..., IX] = a[..., IX] + t[..., 0] * a[..., IR]
    out[..., IY] = a[..., IY] + t[..., 1] * a[..., IR]
    out[..., PX] = a[..., PX] + t[..., 2] * a[..., PR]
    out[..., PY] = a[..., PY] + t[..., 3] * a[..., PR]
    out[..., IR] = a[..., IR] * np.exp(t[..., 4])
    out[..., PR] = a[..., PR] * np.exp(t[..., 5])
    return out


def is_valid(dc) -> np.ndarray:
    """True where radii are positive and finite, pupil.r < iris.r, and the
    pupil center lies inside the iris circle."""
    d = as_dc_array(dc)
    finite = np.all(np.isfinite(d), axis=-1)
    with np.errstate(invalid="ignore"):
        dist = np.hypot(d[..., PX] - d[..., IX], d[..., PY] - d[..., IY])
        return (
            finite
            & (d[..., PR] > 0)
            & (d[..., IR] > d[..., PR])
            & (dist < d[..., IR])
        )


# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------


def _square_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a, b: (..., 3) broadcastable circles (cx, cy, r)
    ax, ay, ar = a[..., 0], a[..., 1], a[..., 2]
    bx, by, br = b[..., 0], b[..., 1], b[..., 2]
    w = np.minimum(ax + ar, bx + br) - np.maximum(ax - ar, bx - br)
    h = np.minimum(ay + ar, by + br) - np.maximum(ay - ar, by - br)
    inter = np.clip(w, 0, None) * np.clip(h, 0, None)
    union = 4 * ar * ar + 4 * br * br - inter
    return np.minimum(inter / union, 1.0)


def circle_iou_square(a, b) -> float | np.ndarray:
    """IoU of the axis-aligned squares circumscribing two circles."""
    ca, cb = _circle_array(a), _circle_array(b)
    if np.any(ca[..., 2] <= 0) or np.any(cb[..., 2] <= 0):
        raise ValueError("circle radii must be positive")
    out = _square_iou(ca, cb)
    return float(out) if out.ndim == 0 else out


def double_circle_iou(a, b) -> float | np.ndarray:
    """Mean of the iris and pupil square IoUs (broadcasting over leading dims)."""
    da, db = as_dc_array(a), as_dc_array(b)
    iris = _square_iou(da[..., [IX, IY, IR]], db[..., [IX, IY, IR]])
    pupil = _square_iou(da[..., [PX, PY, PR]], db[..., [PX, PY, PR]])
    out = 0.5 * (iris + pupil)
    return float(out) if out.ndim == 0 else out


def pairwise_iou(a, b) -> np.ndarray:
    """Double-circle IoU matrix of shape ``(len(a), len(b))``."""
    da = as_dc_array(a).reshape(-1, 6)
    db = as_dc_array(b).reshape(-1, 6)
    return np.asarray(double_circle_iou(da[:, None, :], db[None, :, :])).reshape(len(da), len(db))


def iou_raster_oracle(a, b, resolution=512, shape="square") -> float:
    """Brute-force IoU by rasterizing both shapes on a common grid.

    The grid spans the bounding box of the union at ``resolution`` samples per
    side. Only meant as a test oracle for :func:`circle_iou_square`.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    if shape not in ("square", "disk"):
        raise ValueError(f"unknown shape {shape!r}")
    ca, cb = _circle_array(a), _circle_array(b)
    x0 = min(ca[0] - ca[2], cb[0] - cb[2])
    x1 = max(ca[0] + ca[2], cb[0] + cb[2])
    y0 = min(ca[1] - ca[2], cb[1] - cb[2])
    y1 = max(ca[1] + ca[2], cb[1] + cb[2])
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    X, Y = np.meshgrid(xs, ys)

    def inside(c):
        if shape == "square":
            return (np.abs(X - c[0]) <= c[2]) & (np.abs(Y - c[1]) <= c[2])
        return (X - c[0]) ** 2 + (Y - c[1]) ** 2 <= c[2] ** 2

    ma, mb = inside(ca), inside(cb)
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union if union else 0.0


# ---------------------------------------------------------------------------
# Label assignment and suppression
# ---------------------------------------------------------------------------

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass
class AnchorLabels:
    """Per-anchor training labels.

    ``tags`` holds 1 (positive), 0 (negative) or -1 (ignore); ``matched`` the
    index of the best ground truth (-1 when there is none); ``iou`` the IoU
    against that ground truth.
    """

    tags: np.ndarray
    matched: np.ndarray
    iou: np.ndarray

    def __len__(self):
        return len(self.tags)


def assign_labels(anchors, gts, pos_thr=0.7, neg_thr=0.3) -> AnchorLabels:
    a = as_dc_array(anchors).reshape(-1, 6)
    if len(a) == 0:
        raise ValueError("anchor list is empty")
    if not 0 <= neg_thr < pos_thr <= 1:
        raise ValueError("thresholds must satisfy 0 <= neg_thr < pos_thr <= 1")
    g = as_dc_array(gts).reshape(-1, 6) if len(gts) else np.empty((0, 6))
    n = len(a)
    if len(g) == 0:
        return AnchorLabels(
            tags=np.full(n, NEGATIVE, dtype=np.int8),
            matched=np.full(n, -1, dtype=np.int64),
            iou=np.zeros(n),
        )

    ious = pairwise_iou(a, g)
    matched = np.argmax(ious, axis=1)  # first maximum -> lowest gt index
    best = ious[np.arange(n), matched]
    tags = np.full(n, IGNORE, dtype=np.int8)
    tags[best > pos_thr] = POSITIVE
    tags[best < neg_thr] = NEGATIVE

    # every ground truth keeps at least its best anchor; matched stays the argmax
    for j in range(len(g)):
        i = int(np.argmax(ious[:, j]))
        if ious[i, j] > 0:
            tags[i] = POSITIVE
    return AnchorLabels(tags=tags, matched=matched.astype(np.int64), iou=best)


def dc_nms(proposals, scores, iou_thr=0.7, max_keep=None):
    """Greedy suppression on double-circle IoU.

    Returns ``(kept_proposals, kept_scores, kept_indices)`` sorted by
    descending score.
    """
    p = as_dc_array(proposals).reshape(-1, 6)
    s = np.asarray(scores, dtype=np.float64).ravel()
    if len(p) != len(s):
        raise ValueError("proposals and scores differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not 0 < iou_thr < 1:
        raise ValueError("iou_thr must lie in (0, 1)")
    limit = len(p) if max_keep is None else int(max_keep)

    order = np.argsort(-s, kind="stable")
    overlap = pairwise_iou(p[order], p[order]) > iou_thr
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for k in range(len(order)):
        if len(keep) >= limit:
            break
        if not alive[k]:
            continue
        keep.append(order[k])
        alive &= ~overlap[k]
    keep = np.asarray(keep, dtype=np.int64)
    return p[keep], s[keep], keep
