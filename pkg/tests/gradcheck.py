"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

STEP = 1e-5


def numeric_grad(f, x, step=STEP):
    """d f / d x for scalar ``f`` by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def rel_error(analytic, numeric):
    """Elementwise relative error with a floor that absorbs rounding noise near zero."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-4)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def projection(rng, shape):
    """Random fixed weights turning a tensor output into a scalar objective."""
    return rng.normal(size=shape)
