"""Adam, global-norm clipping and the step-wise learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None],
              state: OptimizerState) -> OptimizerState:
    """Bias-corrected Adam, updating ``params`` in place.

    A ``None`` gradient counts as zero: moments still decay.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ValueError("parameter, gradient and moment counts differ")
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch {g.shape} vs {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return state


class Adam:
    """Binds :func:`adam_step` to a fixed, ordered parameter list."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self, grads=None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def global_norm(grads: Sequence[np.ndarray | None]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None)))


def clip_gradients(grads: Sequence[np.ndarray | None], max_norm: float = 5.0) -> list[np.ndarray | None]:
    """Scale every gradient by max_norm/norm when the global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [None if g is None else g * scale for g in grads]


def lr_schedule_step(lr: float, epoch: int, gamma: float = 0.99, milestones: Sequence[int] = ()) -> float:
    """Learning rate for the epoch after ``epoch``: decayed by gamma, and by 10 at milestones."""
    lr = lr * gamma
    if epoch in milestones:
        lr = lr * 0.1
    return lr
