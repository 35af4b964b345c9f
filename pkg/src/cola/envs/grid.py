"""Discrete predator-prey on a toroidal grid with egocentric partial views.

Three predators and one heuristic prey on a 10x10 torus.  Each predator sees a
5x5 window centred on itself (channels: other predators, prey) plus its own
normalised coordinates.  The episode ends with +10 once at least two predators
are orthogonally adjacent to the prey; every other step costs 0.05.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels

# no-op, up, down, left, right
MOVES = np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]], dtype=np.int64)


@dataclass(frozen=True)
class GridState:
    pos: np.ndarray        # (n_predators + 1, 2) int; prey is the last row
    alive: np.ndarray      # (n_predators,) bool
    seed: int              # prey randomness is keyed on (seed, t)
    t: int = 0
    captured: bool = False
    events: int = 0


def torus_distance(a, b, size: int) -> np.ndarray:
    d = np.abs(np.asarray(a) - np.asarray(b))
    return np.minimum(d, size - d).sum(axis=-1)


class GridPredatorPrey:
    name = "grid_predator_prey"
    continuous = False
    n_actions = 5

    def __init__(self, size: int = 10, n_predators: int = 3, view_radius: int = 2,
                 episode_limit: int = 50, capture_reward: float = 10.0, step_cost: float = 0.05,
                 prey_flee_radius: int = 3, prey_move_prob: float = 0.5, capture_needed: int = 2):
        self.size = size
        self.n_agents = n_predators
        self.view_radius = view_radius
        self.episode_limit = episode_limit
        self.capture_reward = capture_reward
        self.step_cost = step_cost
        self.prey_flee_radius = prey_flee_radius
        self.prey_move_prob = prey_move_prob
        self.capture_needed = capture_needed
        self._channels = np.array([0] * n_predators + [1], dtype=np.int64)

    @property
    def window(self) -> int:
        return 2 * self.view_radius + 1

    @property
    def obs_dim(self) -> int:
        return 2 * self.window ** 2 + 2

    @property
    def state_dim(self) -> int:
        return 2 * (self.n_agents + 1)

    @property
    def prey(self) -> int:
        return self.n_agents

    def reset(self, rng: np.random.Generator) -> tuple[GridState, np.ndarray]:
        cells = rng.choice(self.size * self.size, size=self.n_agents + 1, replace=False)
        pos = np.stack([cells // self.size, cells % self.size], axis=1).astype(np.int64)
        state = GridState(pos=pos, alive=np.ones(self.n_agents, dtype=bool),
                          seed=int(rng.integers(2 ** 31)))
        return state, self.observe(state)

    def observe(self, state: GridState) -> np.ndarray:
        win = kernels.grid_windows(state.pos, self._channels, 2, self.n_agents, self.size,
                                   self.view_radius)
        own = state.pos[: self.n_agents] / (self.size - 1)
        obs = np.concatenate([win.reshape(self.n_agents, -1), own], axis=1)
        obs[~state.alive] = 0.0
        return obs

    def state_vector(self, state: GridState) -> np.ndarray:
        return (state.pos / (self.size - 1)).ravel().astype(np.float64)

    def adjacent_predators(self, pos: np.ndarray, alive: np.ndarray) -> int:
        d = torus_distance(pos[: self.n_agents], pos[self.prey], self.size)
        return int(((d == 1) & alive).sum())

    def heuristic_prey_policy(self, state: GridState, rng: np.random.Generator) -> int:
        """Flee from nearby predators: pick the free move that maximises the
        distance to the closest predator (ties at random); stay otherwise."""
        preds = state.pos[: self.n_agents][state.alive]
        if len(preds) == 0:
            return 0
        prey = state.pos[self.prey]
        if torus_distance(preds, prey, self.size).min() > self.prey_flee_radius:
            return 0
        if rng.random() >= self.prey_move_prob:
            return 0
        cand = (prey[None, :] + MOVES) % self.size
        blocked = np.array([np.any(np.all(preds == c, axis=1)) for c in cand])
        blocked[0] = False
        scores = kernels.flee_scores(prey, preds, MOVES, self.size, blocked)
        best = np.flatnonzero(scores == scores.max())
        return int(best[rng.integers(len(best))])

    def step(self, state: GridState, joint_action) -> tuple[GridState, float, np.ndarray, bool]:
        if state.captured or state.t >= self.episode_limit:
            raise RuntimeError("step called on a finished episode")
        u = np.asarray(joint_action)
        if u.shape != (self.n_agents,) or not np.issubdtype(u.dtype, np.integer) \
                or u.min() < 0 or u.max() >= self.n_actions:
            raise ValueError(f"joint action must be {self.n_agents} ints in [0, 5), got {joint_action!r}")
        pos = state.pos.copy()
        for a in range(self.n_agents):
            if not state.alive[a] or u[a] == 0:
                continue
            target = (pos[a] + MOVES[u[a]]) % self.size
            if not np.any(np.all(pos == target, axis=1)):
                pos[a] = target
        captured = self.adjacent_predators(pos, state.alive) >= self.capture_needed
        if not captured:
            rng = np.random.default_rng([state.seed, state.t])
            mid = replace(state, pos=pos)
            move = self.heuristic_prey_policy(mid, rng)
            pos[self.prey] = (pos[self.prey] + MOVES[move]) % self.size
            captured = self.adjacent_predators(pos, state.alive) >= self.capture_needed
        t = state.t + 1
        nxt = replace(state, pos=pos, t=t, captured=captured, events=int(captured))
        reward = self.capture_reward if captured else -self.step_cost
        done = captured or t >= self.episode_limit
        return nxt, float(reward), self.observe(nxt), done
