"""SGD with momentum and decoupled-from-nothing classic weight decay.

Update rule per parameter:
    v <- momentum * v + grad + weight_decay * w
    w <- w - lr * v
Gradients are left untouched; callers zero them between steps.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


class MissingGradientError(RuntimeError):
    """A parameter reached sgd_step without a populated gradient."""


def sgd_step(
    params: Iterable[Parameter],
    lr: float,
    weight_decay: float = 0.0,
    momentum: float = 0.0,
) -> None:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name!r} has no gradient")
        step = p.grad + np.float32(weight_decay) * p.data
        if momentum != 0.0:
            if p.momentum_buffer is None:
                p.momentum_buffer = np.zeros_like(p.data)
            p.momentum_buffer *= np.float32(momentum)
            p.momentum_buffer += step
            step = p.momentum_buffer
        p.tensor.data = p.data - np.float32(lr) * step


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
