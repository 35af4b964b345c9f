"""Exploration: epsilon-greedy with a linear schedule, and decaying Gaussian
action noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def epsilon_greedy(q_values, epsilon: float, rng: np.random.Generator):
    """Per-row epsilon-greedy choice over the last axis.

    Greedy choices use ``np.argmax`` (lowest index on ties).  One uniform draw
    decides explore/exploit per row and a second picks the random action, so
    the rng stream advances identically whatever the Q-values are.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    q = np.asarray(q_values)
    greedy = np.argmax(q, axis=-1)
    lead = q.shape[:-1]
    explore = rng.random(lead) < epsilon
    random_actions = rng.integers(q.shape[-1], size=lead)
    out = np.where(explore, random_actions, greedy)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LinearSchedule:
    start: float
    end: float
    horizon: int

    def __call__(self, step: int) -> float:
        if self.horizon <= 0:
            return self.end
        frac = min(1.0, max(0.0, step / self.horizon))
        return (1.0 - frac) * self.start + frac * self.end


class GaussianNoise:
    """Independent ``N(0, sigma^2)`` per action dimension; sigma follows a
    linear schedule and never drops below its floor."""

    def __init__(self, sigma_start: float, sigma_end: float, horizon: int):
        if sigma_end < 0 or sigma_start < sigma_end:
            raise ValueError("need sigma_start >= sigma_end >= 0")
        self.schedule = LinearSchedule(sigma_start, sigma_end, horizon)

    def sigma(self, step: int) -> float:
        return max(self.schedule(step), self.schedule.end)

    def sample(self, shape, step: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, self.sigma(step), size=shape)
