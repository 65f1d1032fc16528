"""Losses returning ``(value, gradient w.r.t. the prediction)``."""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce_loss(logits, labels):
    """Two-class softmax cross-entropy, averaged over rows.

    ``logits`` is ``(2,)`` with an integer label, or ``(N, 2)`` with ``(N,)`` labels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    if len(y) != len(z):
        raise ValueError("one label per row of logits is required")
    if len(z) == 0:
        return 0.0, np.zeros_like(logits)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(z))
    loss = float(np.mean(log_norm - shifted[rows, y]))
    grad = softmax(z)
    grad[rows, y] -= 1.0
    grad /= len(z)
    return loss, grad[0] if single else grad


def smooth_l1(pred, target, beta=1.0):
    """Smooth-L1 summed over the last axis and averaged over the remaining rows."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if d.size == 0:
        return 0.0, np.zeros_like(d)
    small = np.abs(d) < beta
    per = np.where(small, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    rows = 1 if d.ndim <= 1 else int(np.prod(d.shape[:-1]))
    grad = np.where(small, d / beta, np.sign(d)) / rows
    return float(per.sum() / rows), grad


def bce_loss(logits, target):
    """Mean binary cross-entropy on logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logit shape {z.shape} differs from target shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("target must be binary")
    if z.size == 0:
        return 0.0, np.zeros_like(z)
    # log(1 + exp(-|z|)) keeps both branches finite
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
    return float(loss.mean()), (sig - y) / z.size


def multitask_loss(cls_loss, reg_loss, lam=1.0):
    return cls_loss + lam * reg_loss
