"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .geometry import DoubleCircle, as_dc_array, is_valid


def check_image(image) -> np.ndarray:
    """Return a finite ``(1, H, W)`` float64 image with values in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise ValueError(f"expected a grayscale (1, H, W) or (H, W) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def check_images(X) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("expected a collection of images; wrap a single image in a list")
    images = [check_image(x) for x in X]
    if not images:
        raise ValueError("no images given")
    return images


def check_mask(mask, shape=None) -> np.ndarray:
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"mask shape {arr.shape} does not match image shape {tuple(shape)}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("mask must be binary (0/1)")
    return arr


def check_targets(y, images) -> tuple[np.ndarray, list[np.ndarray]]:
    """Validate ``(circles, mask)`` pairs; returns ``((n, 6) circles, masks)``."""
    if len(y) != len(images):
        raise ValueError(f"{len(images)} images but {len(y)} targets")
    circles, masks = [], []
    for (dc, mask), img in zip(y, images):
        arr = as_dc_array(dc if isinstance(dc, DoubleCircle) else np.asarray(dc)).reshape(6)
        if not bool(is_valid(arr)):
            raise ValueError(f"invalid ground-truth double circle {arr.tolist()}")
        circles.append(arr)
        masks.append(check_mask(mask, img.shape))
    return np.stack(circles), masks
