from __future__ import annotations

import math

import numpy as np

from ..errors import ParameterError


def sgd_step(params, grads, lr, momentum=0.0, weight_decay=0.0, velocity=None):
    """One SGD update in place.

    ``v <- momentum * v + (g + weight_decay * p)``; ``p <- p - lr * v``.
    ``params`` and ``grads`` map name -> array; ``velocity`` (same keys) is
    created on first use and returned.
    """
    if not lr > 0:
        raise ParameterError(f"learning rate must be > 0, got {lr}")
    if velocity is None:
        velocity = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ParameterError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        step = g.astype(p.dtype, copy=True)
        if weight_decay:
            step += weight_decay * p
        if momentum:
            v = velocity.get(name)
            if v is None:
                v = velocity[name] = np.zeros_like(p)
            v *= momentum
            v += step
            step = v
        p -= lr * step
    return velocity


class SGD:
    def __init__(self, model, lr=0.01, momentum=0.9, weight_decay=1e-4):
        if not lr > 0:
            raise ParameterError(f"learning rate must be > 0, got {lr}")
        self.model = model
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, grads, lr=None):
        params = {name: p.data for name, p in self.model.named_params()}
        sgd_step(params, grads, self.lr if lr is None else lr, self.momentum,
                 self.weight_decay, self.velocity)


def cosine_lr(base_lr, step, total_steps, min_lr=0.0):
    """Half-cosine decay evaluated at the middle of each step, so every
    step (including the last) gets a positive rate."""
    if total_steps <= 1:
        return base_lr
    frac = min((step + 0.5) / total_steps, 1.0)
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + math.cos(math.pi * frac))
