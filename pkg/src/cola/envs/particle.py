"""Continuous-action particle worlds: cooperative navigation, predator-prey and
pantomime.

Entities live in ``[-1, 1]^2``.  Each step integrates
``v <- v (1 - damping) + F/m dt`` then ``p <- p + v dt`` with ``dt = 0.1``,
``damping = 0.25``, unit mass and elastic walls.  All agents share one scalar
reward.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels

DT = 0.1
DAMPING = 0.25
RADIUS = 0.1
BOUND = 1.0
EPISODE_LIMIT = 100


@dataclass(frozen=True)
class ScenarioState:
    pos: np.ndarray            # (entities, 2); agents first
    vel: np.ndarray            # (entities, 2)
    landmarks: np.ndarray      # (landmarks, 2)
    alive: np.ndarray          # (agents,) bool
    t: int = 0
    targets: np.ndarray | None = None
    events: int = 0            # scenario events during the last step (catches)


def _check_action(action: np.ndarray, n: int) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (n, 2):
        raise ValueError(f"joint action must have shape ({n}, 2), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("joint action contains non-finite entries")
    return np.clip(a, -1.0, 1.0)


def _sample_separated(rng: np.random.Generator, count: int, min_dist: float,
                      bound: float = BOUND, fixed: np.ndarray | None = None) -> np.ndarray:
    """Uniform points at least ``min_dist`` apart from each other and from ``fixed``."""
    pts: list[np.ndarray] = []
    others = [] if fixed is None else list(fixed)
    for _ in range(count):
        for _attempt in range(1000):
            p = rng.uniform(-bound, bound, size=2)
            if all(np.linalg.norm(p - q) >= min_dist for q in pts + others):
                break
        pts.append(p)
    return np.array(pts).reshape(count, 2)


class ParticleScenario:
    """Shared plumbing.  Subclasses set sizes and implement ``_observe_agent``
    and ``reward``."""

    name = "particle"
    continuous = True
    act_dim = 2
    n_agents = 0
    obs_dim = 0
    episode_limit = EPISODE_LIMIT

    def __init__(self):
        self.inv_mass = None
        self.force_scale = None

    @property
    def state_dim(self) -> int:
        raise NotImplementedError

    # -- public contract
    def reset(self, rng: np.random.Generator) -> tuple[ScenarioState, np.ndarray]:
        state = self._reset(rng)
        return state, self.observe(state)

    def step(self, state: ScenarioState, joint_action) -> tuple[ScenarioState, float, np.ndarray, bool]:
        if state.t >= self.episode_limit:
            raise RuntimeError("step called on a finished episode")
        action = _check_action(joint_action, self.n_agents)
        force = self._forces(state, action)
        pos, vel = kernels.integrate(state.pos, state.vel, force, self.inv_mass, DAMPING, DT, BOUND)
        pos, vel = self._constrain(state, pos, vel)
        nxt = replace(state, pos=pos, vel=vel, t=state.t + 1)
        nxt = self._post_step(nxt)
        reward = float(self.reward(nxt))
        done = nxt.t >= self.episode_limit
        return nxt, reward, self.observe(nxt), done

    def observe(self, state: ScenarioState) -> np.ndarray:
        obs = np.zeros((self.n_agents, self.obs_dim))
        for a in range(self.n_agents):
            if state.alive[a]:
                obs[a] = self._observe_agent(state, a)
        return obs

    def state_vector(self, state: ScenarioState) -> np.ndarray:
        raise NotImplementedError

    def reward(self, state: ScenarioState) -> float:
        raise NotImplementedError

    # -- hooks
    def _reset(self, rng) -> ScenarioState:
        raise NotImplementedError

    def _forces(self, state: ScenarioState, action: np.ndarray) -> np.ndarray:
        force = np.zeros_like(state.pos)
        force[: self.n_agents] = action * state.alive[:, None]
        return force * self.force_scale[:, None]

    def _constrain(self, state, pos, vel):
        return pos, vel

    def _post_step(self, state: ScenarioState) -> ScenarioState:
        return state

    def _observe_agent(self, state: ScenarioState, a: int) -> np.ndarray:
        raise NotImplementedError


class CooperativeNavigation(ParticleScenario):
    """Three agents cover three landmarks; colliding pairs cost 1 per step."""

    name = "navigation"
    n_agents = 3
    n_landmarks = 3
    obs_dim = 4 + 2 * 3 + 2 * 2
    collision_penalty = 1.0

    def __init__(self):
        self.inv_mass = np.ones(self.n_agents)
        self.force_scale = np.ones(self.n_agents)

    @property
    def state_dim(self) -> int:
        return 4 * self.n_agents + 2 * self.n_landmarks

    def _reset(self, rng):
        pos = rng.uniform(-BOUND, BOUND, size=(self.n_agents, 2))
        landmarks = rng.uniform(-BOUND, BOUND, size=(self.n_landmarks, 2))
        return ScenarioState(pos=pos, vel=np.zeros_like(pos), landmarks=landmarks,
                             alive=np.ones(self.n_agents, dtype=bool))

    def _observe_agent(self, state, a):
        p = state.pos[a]
        others = [state.pos[b] - p for b in range(self.n_agents) if b != a]
        return np.concatenate([state.vel[a], p, (state.landmarks - p).ravel(), np.ravel(others)])

    def state_vector(self, state):
        return np.concatenate([state.pos.ravel(), state.vel.ravel(), state.landmarks.ravel()])

    def collisions(self, state) -> int:
        d = kernels.pairwise_distances(state.pos, state.pos)
        iu = np.triu_indices(self.n_agents, 1)
        return int((d[iu] < 2 * RADIUS).sum())

    def reward(self, state):
        d = kernels.pairwise_distances(state.landmarks, state.pos[: self.n_agents])
        return -float(d.min(axis=1).sum()) - self.collision_penalty * self.collisions(state)


class CooperativePredatorPrey(ParticleScenario):
    """Three predators chase one faster heuristic prey around two obstacles.

    Reward: ``+10`` per predator touching the prey this step, minus
    ``0.1 * sum`` of predator-prey distances.
    """

    name = "predator_prey"
    n_agents = 3
    n_obstacles = 2
    obstacle_radius = 0.2
    prey_speed_ratio = 1.3
    catch_reward = 10.0
    shaping = 0.1
    obs_dim = 4 + 2 * 2 + 2 * 2 + 4

    def __init__(self):
        self.inv_mass = np.ones(self.n_agents + 1)
        self.force_scale = np.ones(self.n_agents + 1)
        self.force_scale[-1] = self.prey_speed_ratio

    @property
    def prey(self) -> int:
        return self.n_agents

    @property
    def state_dim(self) -> int:
        return 4 * (self.n_agents + 1) + 2 * self.n_obstacles

    def _reset(self, rng):
        # keep the push-out ring inside the walls so the two constraints never fight
        obstacles = _sample_separated(rng, self.n_obstacles, 2 * self.obstacle_radius,
                                      bound=BOUND - self.obstacle_radius - RADIUS)
        # entities must not start inside an obstacle
        pos = np.zeros((self.n_agents + 1, 2))
        for i in range(self.n_agents + 1):
            while True:
                p = rng.uniform(-BOUND, BOUND, size=2)
                if np.all(np.linalg.norm(obstacles - p, axis=1) >= self.obstacle_radius + RADIUS):
                    break
            pos[i] = p
        return ScenarioState(pos=pos, vel=np.zeros_like(pos), landmarks=obstacles,
                             alive=np.ones(self.n_agents, dtype=bool))

    def heuristic_prey_policy(self, state: ScenarioState, rng=None) -> np.ndarray:
        """Unit direction from the nearest predator to the prey."""
        prey = state.pos[self.prey]
        preds = state.pos[: self.n_agents][state.alive]
        if len(preds) == 0:
            return np.zeros(2)
        d = np.linalg.norm(preds - prey, axis=1)
        away = prey - preds[int(np.argmin(d))]
        norm = np.linalg.norm(away)
        return away / norm if norm > 1e-12 else np.array([1.0, 0.0])

    def _forces(self, state, action):
        force = np.zeros_like(state.pos)
        force[: self.n_agents] = action * state.alive[:, None]
        force[self.prey] = self.heuristic_prey_policy(state)
        return force * self.force_scale[:, None]

    def _constrain(self, state, pos, vel):
        min_dist = np.full((pos.shape[0], self.n_obstacles), self.obstacle_radius + RADIUS)
        return kernels.push_out(pos, vel, state.landmarks, min_dist)

    def catches(self, state) -> int:
        d = np.linalg.norm(state.pos[: self.n_agents] - state.pos[self.prey], axis=1)
        return int(((d < 2 * RADIUS) & state.alive).sum())

    def _post_step(self, state):
        return replace(state, events=self.catches(state))

    def reward(self, state):
        d = np.linalg.norm(state.pos[: self.n_agents] - state.pos[self.prey], axis=1)
        return self.catch_reward * self.catches(state) - self.shaping * float(d[state.alive].sum())

    def _observe_agent(self, state, a):
        p = state.pos[a]
        others = [state.pos[b] - p for b in range(self.n_agents) if b != a]
        return np.concatenate([state.vel[a], p, (state.landmarks - p).ravel(), np.ravel(others),
                               state.pos[self.prey] - p, state.vel[self.prey]])

    def state_vector(self, state):
        return np.concatenate([state.pos.ravel(), state.vel.ravel(), state.landmarks.ravel()])


class CooperativePantomime(ParticleScenario):
    """Two agents, three landmarks, two distinct target landmarks.

    Agent ``a`` sees all landmark positions and the target of the other agent,
    never its own.  Reward: ``-(|p1 - t1| + |p2 - t2|)``.
    """

    name = "pantomime"
    n_agents = 2
    n_landmarks = 3
    obs_dim = 4 + 2 * 3 + 2 + 2

    def __init__(self):
        self.inv_mass = np.ones(self.n_agents)
        self.force_scale = np.ones(self.n_agents)

    @property
    def state_dim(self) -> int:
        return 4 * self.n_agents + 2 * self.n_landmarks + self.n_agents * self.n_landmarks

    def _reset(self, rng):
        pos = rng.uniform(-BOUND, BOUND, size=(self.n_agents, 2))
        landmarks = _sample_separated(rng, self.n_landmarks, 2 * RADIUS)
        targets = rng.choice(self.n_landmarks, size=self.n_agents, replace=False)
        return ScenarioState(pos=pos, vel=np.zeros_like(pos), landmarks=landmarks,
                             alive=np.ones(self.n_agents, dtype=bool), targets=targets)

    def target_positions(self, state) -> np.ndarray:
        return state.landmarks[state.targets]

    def _observe_agent(self, state, a):
        p = state.pos[a]
        b = 1 - a
        return np.concatenate([state.vel[a], p, (state.landmarks - p).ravel(),
                               state.pos[b] - p, state.landmarks[state.targets[b]] - p])

    def reward(self, state):
        d = np.linalg.norm(state.pos - self.target_positions(state), axis=1)
        return -float(d.sum())

    def state_vector(self, state):
        onehot = np.zeros((self.n_agents, self.n_landmarks))
        onehot[np.arange(self.n_agents), state.targets] = 1.0
        return np.concatenate([state.pos.ravel(), state.vel.ravel(), state.landmarks.ravel(),
                               onehot.ravel()])

    def oracle_policy(self, state) -> np.ndarray:
        """Privileged controller that knows each agent's own target."""
        err = self.target_positions(state) - state.pos
        return np.clip(4.0 * err - 2.0 * state.vel, -1.0, 1.0)
