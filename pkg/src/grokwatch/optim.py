"""AdamW with decoupled weight decay and hyperparameters that can change mid-run."""

from __future__ import annotations

from typing import Optional

import numpy as np


def default_decay_mask(params: dict) -> dict:
    """Decay every tensor of rank >= 2; biases and layer-norm vectors are exempt."""
    return {name: p.data.ndim >= 2 for name, p in params.items()}


class AdamW:
    """Update rule, per parameter theta with gradient g at step t::

        m <- b1 m + (1 - b1) g
        v <- b2 v + (1 - b2) g^2
        theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta   (decayed only)

    ``params`` is a name -> Tensor mapping; updates are applied in place to ``.data``.
    """

    def __init__(self, params: dict, lr: float = 1e-3, weight_decay: float = 1.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 decay: Optional[dict] = None):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.lr = 0.0
        self.weight_decay = 0.0
        self.set_hyperparams(lr=lr, wd=weight_decay)
        self.decay = dict(decay) if decay is not None else default_decay_mask(params)
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    def set_hyperparams(self, lr: Optional[float] = None, wd: Optional[float] = None):
        """Change learning rate and/or weight decay; moment buffers are untouched."""
        if lr is not None:
            if not lr > 0:
                raise ValueError(f"learning rate must be positive, got {lr}")
            self.lr = float(lr)
        if wd is not None:
            if wd < 0:
                raise ValueError(f"weight decay must be non-negative, got {wd}")
            self.weight_decay = float(wd)

    def step(self, grads: Optional[dict] = None):
        """Apply one update. ``grads`` defaults to each parameter's ``.grad``."""
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        lr, wd = self.lr, self.weight_decay
        for name, p in self.params.items():
            g = p.grad if grads is None else grads[name]
            if g is None:
                raise ValueError(f"missing gradient for {name}")
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match {name} {p.data.shape}")
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.decay[name] and wd:
                update += (lr * wd) * p.data
            p.data -= update
