from __future__ import annotations

from collections.abc import Iterable

from .layers import Parameter


def sgd_step(params: Iterable[Parameter], lr, momentum=0.9, weight_decay=1e-4):
    """Momentum SGD with L2 weight decay folded into the velocity.

    ``v <- momentum * v + grad + weight_decay * w``; ``w <- w - lr * v``.
    Gradients are zeroed afterwards.
    """
    for p in params:
        p.velocity *= momentum
        p.velocity += p.grad
        if weight_decay:
            p.velocity += weight_decay * p.data
        p.data -= lr * p.velocity
        p.grad.fill(0.0)


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.grad.fill(0.0)
