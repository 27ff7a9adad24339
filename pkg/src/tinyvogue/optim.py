"""AdamW with decoupled weight decay over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, NumericError


class AdamWState:
    """First/second moments per parameter plus a shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    *,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One in-place AdamW update: w -= lr * (mhat/(sqrt(vhat)+eps) + wd*w).

    Weight decay is decoupled (applied to the raw weights, not the gradient).
    The step counter increments exactly once per call. All validation happens
    before any mutation, so a rejected call leaves params and state untouched.
    """
    b1, b2 = betas
    t = state.t + 1
    staged = []
    for name, p in params.items():
        if name not in grads or grads[name] is None:
            raise ContractError(f"adamw_step: missing grad for parameter {name!r}")
        g = grads[name]
        if g.shape != p.data.shape:
            raise ContractError(f"adamw_step: grad shape {g.shape} != param shape {p.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adamw_step: non-finite grad for parameter {name!r}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        staged.append((name, p, m, v, (lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p.data)).astype(p.data.dtype)))
    state.t = t
    for name, p, m, v, update in staged:
        state.m[name] = m
        state.v[name] = v
        p.data -= update


class AdamW:
    """Stateful wrapper tying hyperparameters to an AdamWState."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState(params)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        adamw_step(
            self.params,
            grads,
            self.state,
            lr=self.lr,
            betas=self.betas,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )
