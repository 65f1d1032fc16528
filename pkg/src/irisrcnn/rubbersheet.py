"""Rubber-sheet polar remapping of double-circle regions.

The same sampler serves three purposes: normalizing iris images (64x512),
pooling backbone features inside a proposal (7x7 for the refinement head,
16x32 for the mask head) and carrying masks into normalized space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import IR, IX, IY, PR, PX, PY, DoubleCircle, as_dc_array


@dataclass
class NormalizedMap:
    data: np.ndarray  # (channels, out_h, out_w)
    source: DoubleCircle | np.ndarray

    @property
    def out_h(self) -> int:
        return self.data.shape[1]

    @property
    def out_w(self) -> int:
        return self.data.shape[2]


def polar_sample_point(dc, rho, theta):
    """Cartesian position at radial fraction ``rho`` and angle ``theta``.

    ``rho = 0`` lies on the pupil circle and ``rho = 1`` on the iris circle;
    ``theta`` is measured from the +x axis towards +y.
    """
    d = as_dc_array(dc)
    c, s = np.cos(theta), np.sin(theta)
    x = (1 - rho) * (d[..., PX] + d[..., PR] * c) + rho * (d[..., IX] + d[..., IR] * c)
    y = (1 - rho) * (d[..., PY] + d[..., PR] * s) + rho * (d[..., IY] + d[..., IR] * s)
    return x, y


def polar_grid(dc, out_h, out_w, scale=1.0):
    """Sampling positions for one or many double circles.

    Returns ``(xs, ys)`` with shape ``(..., out_h, out_w)``; ``scale`` divides
    all coordinates (feature stride).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be at least 1")
    d = as_dc_array(dc) / float(scale)
    rho = (np.arange(out_h) + 0.5) / out_h
    theta = 2 * np.pi * np.arange(out_w) / out_w
    c, s = np.cos(theta), np.sin(theta)
    d = d[..., None, None, :]
    r = rho[:, None]
    xs = (1 - r) * (d[..., PX] + d[..., PR] * c) + r * (d[..., IX] + d[..., IR] * c)
    ys = (1 - r) * (d[..., PY] + d[..., PR] * s) + r * (d[..., IY] + d[..., IR] * s)
    return xs, ys


class BilinearSampler:
    """Bilinear lookup of a ``(C, H, W)`` map at continuous positions.

    Neighbours that fall outside the map contribute zero. The sampler keeps
    its gather indices and weights so :meth:`backward` can scatter gradients
    back onto the map (the adjoint of :meth:`sample`).
    """

    def __init__(self, xs, ys, height, width):
        self.shape_out = np.shape(xs)
        self.height, self.width = int(height), int(width)
        u = np.asarray(xs, dtype=np.float64).ravel() - 0.5
        v = np.asarray(ys, dtype=np.float64).ravel() - 0.5
        x0 = np.floor(u)
        y0 = np.floor(v)
        fx, fy = u - x0, v - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        idx, wts = [], []
        for dy, dx, w in (
            (0, 0, (1 - fy) * (1 - fx)),
            (0, 1, (1 - fy) * fx),
            (1, 0, fy * (1 - fx)),
            (1, 1, fy * fx),
        ):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < self.width) & (yi >= 0) & (yi < self.height)
            idx.append(np.where(ok, yi * self.width + xi, 0))
            wts.append(np.where(ok, w, 0.0))
        self.idx = np.stack(idx)  # (4, P)
        self.wts = np.stack(wts)

    def sample(self, src: np.ndarray) -> np.ndarray:
        src = np.asarray(src, dtype=np.float64)
        if src.ndim != 3 or src.shape[1:] != (self.height, self.width):
            raise ValueError(f"expected a (C, {self.height}, {self.width}) map, got {src.shape}")
        flat = src.reshape(src.shape[0], -1)
        out = (flat[:, self.idx] * self.wts).sum(axis=1)
        return out.reshape((src.shape[0],) + self.shape_out)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = np.asarray(grad, dtype=np.float64).reshape(grad.shape[0], -1)
        out = np.zeros((g.shape[0], self.height * self.width))
        for k in range(4):
            contrib = g * self.wts[k]
            for c in range(g.shape[0]):
                out[c] += np.bincount(
                    self.idx[k], weights=contrib[c], minlength=self.height * self.width
                )
        return out.reshape(g.shape[0], self.height, self.width)


def _check_map(src) -> np.ndarray:
    src = np.asarray(src, dtype=np.float64)
    if src.ndim == 2:
        src = src[None]
    if src.ndim != 3:
        raise ValueError(f"expected a (C, H, W) array, got shape {src.shape}")
    if not np.all(np.isfinite(src)):
        raise ValueError("source contains non-finite values")
    return src


def unwrap(src, dc, out_h=64, out_w=512) -> NormalizedMap:
    """Unwrap the region between pupil and iris circles into ``(C, out_h, out_w)``.

    Row ``k`` samples radial fraction ``(k + 0.5) / out_h``; column ``j`` the
    angle ``2 pi j / out_w``.
    """
    src = _check_map(src)
    xs, ys = polar_grid(dc, out_h, out_w)
    data = BilinearSampler(xs, ys, src.shape[1], src.shape[2]).sample(src)
    return NormalizedMap(data=data, source=dc)


def unwrap_mask(mask, dc, out_h=64, out_w=512) -> NormalizedMap:
    m = _check_map(mask)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask must be binary (0/1)")
    nm = unwrap(m, dc, out_h, out_w)
    nm.data = (nm.data >= 0.5).astype(np.float64)
    return nm


def roi_normalize(features, dc, feature_stride, out_h=7, out_w=7) -> np.ndarray:
    """Pool features inside one double circle given in image coordinates."""
    if not feature_stride > 0:
        raise ValueError("feature_stride must be positive")
    f = _check_map(features)
    xs, ys = polar_grid(dc, out_h, out_w, scale=feature_stride)
    return BilinearSampler(xs, ys, f.shape[1], f.shape[2]).sample(f)


class RoiNormalizer:
    """Batched :func:`roi_normalize` with a backward pass onto the feature map.

    Gradients flow to the features only; proposal coordinates are constants.
    """

    def __init__(self, rois, feature_shape, feature_stride, out_h, out_w):
        rois = as_dc_array(rois).reshape(-1, 6)
        self.n = len(rois)
        self.out_h, self.out_w = out_h, out_w
        _, h, w = feature_shape
        xs, ys = polar_grid(rois, out_h, out_w, scale=feature_stride)
        self.sampler = BilinearSampler(xs, ys, h, w)

    def forward(self, features) -> np.ndarray:
        # (C, n, out_h, out_w) -> (n, C, out_h, out_w)
        return np.ascontiguousarray(self.sampler.sample(features).transpose(1, 0, 2, 3))

    def backward(self, grad) -> np.ndarray:
        return self.sampler.backward(np.ascontiguousarray(grad.transpose(1, 0, 2, 3)))
