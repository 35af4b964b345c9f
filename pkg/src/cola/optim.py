"""RMSProp and Adam over lists of :class:`~cola.tensor.Parameter`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, Parameter


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "rmsprop"
    learning_rate: float = 5e-4
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


def _checked_grad(p: Parameter) -> np.ndarray:
    g = p.grad
    if g is None:
        return np.zeros_like(p.data)
    if g.shape != p.data.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameter "
                         f"{p.name or '?'} {p.data.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite gradient in parameter {p.name or '?'}")
    return g


def rmsprop_step(params: Sequence[Parameter], config: OptimizerConfig) -> None:
    """``v <- a v + (1-a) g^2``; ``p <- p - lr g / sqrt(v + eps)``."""
    a, eps, lr = config.rmsprop_decay, config.rmsprop_eps, config.learning_rate
    grads = [_checked_grad(p) for p in params]
    for p, g in zip(params, grads):
        v = p.state.get("square_avg")
        if v is None:
            v = np.zeros_like(p.data)
        v = a * v + (1.0 - a) * g * g
        p.state["square_avg"] = v
        p.data -= lr * g / np.sqrt(v + eps)


def adam_step(params: Sequence[Parameter], config: OptimizerConfig) -> None:
    b1, b2 = config.adam_betas
    eps, lr = config.adam_eps, config.learning_rate
    grads = [_checked_grad(p) for p in params]
    for p, g in zip(params, grads):
        t = int(p.state.get("step", 0)) + 1
        m = p.state.get("exp_avg")
        v = p.state.get("exp_avg_sq")
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        p.state.update(step=t, exp_avg=m, exp_avg_sq=v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class Optimizer:
    """Bundles a parameter list with its config; ``step`` dispatches on ``kind``."""

    def __init__(self, params: Sequence[Parameter], config: OptimizerConfig):
        self.params = list(params)
        self.config = config

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        if self.config.kind == "rmsprop":
            rmsprop_step(self.params, self.config)
        else:
            adam_step(self.params, self.config)
