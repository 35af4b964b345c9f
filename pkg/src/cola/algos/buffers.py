"""Replay storage: whole episodes for value decomposition, single transitions
for MADDPG."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Episode:
    obs: np.ndarray          # (T+1, n, obs_dim)
    state: np.ndarray        # (T+1, state_dim)
    alive: np.ndarray        # (T+1, n) bool
    actions: np.ndarray      # (T, n) int
    rewards: np.ndarray      # (T,)
    terminated: np.ndarray   # (T,) bool, true terminal (no bootstrap)
    consensus: np.ndarray    # (T+1, n) int, -1 when consensus is off

    def __post_init__(self):
        for name in ("obs", "state", "alive", "actions", "rewards", "terminated", "consensus"):
            getattr(self, name).setflags(write=False)

    @property
    def length(self) -> int:
        return int(self.rewards.shape[0])


@dataclass
class EpisodeBatch:
    obs: np.ndarray          # (B, T+1, n, d)
    state: np.ndarray        # (B, T+1, ds)
    alive: np.ndarray        # (B, T+1, n)
    actions: np.ndarray      # (B, T, n)
    rewards: np.ndarray      # (B, T)
    terminated: np.ndarray   # (B, T)
    mask: np.ndarray         # (B, T) 1 on real steps, 0 on padding

    @property
    def size(self) -> int:
        return self.obs.shape[0]

    @property
    def max_len(self) -> int:
        return self.rewards.shape[1]


def pad_episodes(episodes: list[Episode]) -> EpisodeBatch:
    b = len(episodes)
    t_max = max(e.length for e in episodes)
    first = episodes[0]
    n, d = first.obs.shape[1:]
    ds = first.state.shape[1]
    obs = np.zeros((b, t_max + 1, n, d))
    state = np.zeros((b, t_max + 1, ds))
    alive = np.zeros((b, t_max + 1, n), dtype=bool)
    actions = np.zeros((b, t_max, n), dtype=np.int64)
    rewards = np.zeros((b, t_max))
    terminated = np.zeros((b, t_max), dtype=bool)
    mask = np.zeros((b, t_max))
    for i, e in enumerate(episodes):
        t = e.length
        obs[i, : t + 1] = e.obs
        state[i, : t + 1] = e.state
        alive[i, : t + 1] = e.alive
        actions[i, :t] = e.actions
        rewards[i, :t] = e.rewards
        terminated[i, :t] = e.terminated
        mask[i, :t] = 1.0
    return EpisodeBatch(obs, state, alive, actions, rewards, terminated, mask)


class EpisodeBuffer:
    """Ring buffer of complete episodes with uniform sampling."""

    def __init__(self, capacity: int = 5000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Episode] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, episode: Episode) -> None:
        if len(self._items) < self.capacity:
            self._items.append(episode)
        else:
            self._items[self._next] = episode
        self._next = (self._next + 1) % self.capacity

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        n = len(self._items)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.choice(n, size=min(batch_size, n), replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> EpisodeBatch:
        return pad_episodes([self._items[i] for i in self.sample_indices(batch_size, rng)])


@dataclass
class TransitionBatch:
    obs: np.ndarray          # (N, n, d)
    actions: np.ndarray      # (N, n, act_dim)
    rewards: np.ndarray      # (N,)
    next_obs: np.ndarray     # (N, n, d)
    terminated: np.ndarray   # (N,)
    alive: np.ndarray        # (N, n)
    next_alive: np.ndarray   # (N, n)


class TransitionBuffer:
    """Preallocated ring buffer of ``(z, u, r, z')``; a batch never repeats an index."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, act_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        # np.zeros maps lazily, so large capacities only cost what is written
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents, act_dim))
        self.rewards = np.zeros(capacity)
        self.terminated = np.zeros(capacity, dtype=bool)
        self.alive = np.zeros((capacity, n_agents), dtype=bool)
        self.next_alive = np.zeros((capacity, n_agents), dtype=bool)
        self._size = 0
        self._next = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs, actions, reward, next_obs, terminated, alive, next_alive) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = actions
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminated[i] = terminated
        self.alive[i] = alive
        self.next_alive[i] = next_alive
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.choice(self._size, size=min(batch_size, self._size), replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        idx = self.sample_indices(batch_size, rng)
        return TransitionBatch(self.obs[idx], self.actions[idx], self.rewards[idx],
                               self.next_obs[idx], self.terminated[idx], self.alive[idx],
                               self.next_alive[idx])
