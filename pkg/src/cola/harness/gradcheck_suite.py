"""Finite-difference checks over every network and loss in the package.

Each item builds a small random instance and returns ``(f, params)`` for
:func:`cola.gradcheck.finite_difference_check`.  Widths are kept tiny so the
coordinate-wise central differences stay fast.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .. import tensor as T
from ..algos.buffers import Episode, TransitionBatch, pad_episodes
from ..algos.config import TrainConfig
from ..algos.maddpg import MaddpgLearner
from ..algos.value_decomposition import EnvSpec, ValueDecompositionLearner
from ..consensus import ConsensusBuilder, ConsensusConfig
from ..gradcheck import finite_difference_check
from ..nets import MLP, Actor, AgentQNet, Critic, GRUCell, QmixMixer, VdnMixer

TOLERANCE = 1e-4


def _matmul(rng):
    a = T.Parameter(rng.normal(size=(3, 4)))
    b = T.Parameter(rng.normal(size=(4, 2)))
    return (lambda: T.tsum(T.tanh(T.matmul(a, b)))), [a, b]


def _mlp(rng):
    net = MLP([5, 6, 6, 3], rng, hidden_activation="tanh")
    x = rng.normal(size=(4, 5))
    return (lambda: T.tsum(T.square(net(x)))), net.parameters()


def _gru(rng):
    cell = GRUCell(3, 4, rng)
    xs = rng.normal(size=(3, 2, 3))

    def f():
        h = cell.initial_state(2)
        for t in range(3):
            h = cell(xs[t], h)
        return T.tsum(T.square(h))
    return f, cell.parameters()


def _qmix(rng):
    mixer = QmixMixer(3, 5, rng, embed_dim=4, hyper_hidden=6)
    qs = T.Parameter(rng.normal(size=(4, 3)))
    s = rng.normal(size=(4, 5))
    return (lambda: T.tsum(T.square(mixer(qs, s)))), mixer.parameters() + [qs]


def _vdn(rng):
    net = AgentQNet(4, 3, rng, k=3, embed_dim=2, hidden=4)
    x = rng.normal(size=(2, 4))
    c = np.array([0, 2])
    mixer = VdnMixer()

    def f():
        q, _ = net(x, c, net.initial_state(2))
        return T.square(mixer(T.tsum(T.mul(q, np.eye(3)[[1, 2]]), axis=-1)))
    return f, net.parameters()


def _actor(rng):
    actor = Actor(5, 2, rng, k=3, embed_dim=2, hidden=6)
    x = rng.normal(size=(4, 5))
    c = np.array([0, 1, 2, 1])
    return (lambda: T.tsum(T.square(actor(x, c)))), actor.parameters()


def _critic(rng):
    critic = Critic(6, 4, rng, k=3, embed_dim=2, hidden=6)
    x = rng.normal(size=(4, 6))
    u = T.Parameter(rng.uniform(-1, 1, size=(4, 4)))
    c = np.array([2, 1, 0, 1])
    return (lambda: T.tsum(T.square(critic(x, c, u)))), critic.parameters() + [u]


def _consensus_loss(rng):
    builder = ConsensusBuilder(4, rng, ConsensusConfig(k=3, hidden=5))
    builder.center = rng.normal(size=3)
    feats = rng.normal(size=(3, 3, 4))
    alive = np.array([[1, 1, 1], [1, 0, 1], [0, 0, 1]], dtype=bool)
    return (lambda: builder.consensus_loss(feats, alive)), builder.student.parameters()


def toy_value_batch(rng, n_actions: int = 3, obs_dim: int = 3, steps: int = 2):
    """Two 2-agent episodes (one of them a step shorter, so padding is exercised)."""
    eps = []
    for length in (steps, steps - 1 if steps > 1 else steps):
        eps.append(Episode(
            obs=rng.normal(size=(length + 1, 2, obs_dim)),
            state=rng.normal(size=(length + 1, 4)),
            alive=np.ones((length + 1, 2), dtype=bool),
            actions=rng.integers(n_actions, size=(length, 2)),
            rewards=rng.normal(size=length),
            terminated=np.eye(1, length, length - 1, dtype=bool)[0],
            consensus=np.full((length + 1, 2), -1)))
    return pad_episodes(eps)


def _td_loss(rng, algorithm="cola_qmix", consensus_input="hidden_state"):
    spec = EnvSpec(n_agents=2, obs_dim=3, state_dim=4, n_actions=3)
    cfg = TrainConfig(algorithm=algorithm, consensus_input=consensus_input, k=3, embed_dim=2,
                      hidden_dim=4, mixer_embed_dim=3, hyper_hidden_dim=4, cb_hidden_dim=4)
    learner = ValueDecompositionLearner(spec, cfg, rng)
    for p in learner.target_mixer.parameters() + [p for a in learner.target_agents for p in a.parameters()]:
        p.data = p.data + 0.1 * rng.normal(size=p.data.shape)   # make targets differ from online
    batch = toy_value_batch(rng)
    return (lambda: learner.rl_loss(batch)), learner.rl_parameters()


def toy_transition_batch(rng, n: int = 2, obs_dim: int = 3, act_dim: int = 2, size: int = 5):
    return TransitionBatch(obs=rng.normal(size=(size, n, obs_dim)),
                           actions=rng.uniform(-1, 1, size=(size, n, act_dim)),
                           rewards=rng.normal(size=size), next_obs=rng.normal(size=(size, n, obs_dim)),
                           terminated=np.arange(size) == size - 1,
                           alive=np.ones((size, n), dtype=bool), next_alive=np.ones((size, n), dtype=bool))


def _maddpg_learner(rng):
    spec = EnvSpec(n_agents=2, obs_dim=3, state_dim=6, act_dim=2)
    cfg = TrainConfig(algorithm="cola_maddpg", k=3, embed_dim=2, hidden_dim=5, cb_hidden_dim=4)
    return MaddpgLearner(spec, cfg, rng)


def _maddpg_critic(rng):
    learner = _maddpg_learner(rng)
    batch = toy_transition_batch(rng)
    return (lambda: learner.critic_loss(batch, 0)), learner.critics[0].parameters()


def _maddpg_actor(rng):
    learner = _maddpg_learner(rng)
    batch = toy_transition_batch(rng)
    return (lambda: learner.actor_loss(batch, 1)), learner.actors[1].parameters()


ITEMS: dict[str, Callable] = {
    "matmul": _matmul,
    "mlp_tanh": _mlp,
    "gru_3_step": _gru,
    "qmix_mixer": _qmix,
    "vdn_agent_path": _vdn,
    "actor": _actor,
    "critic": _critic,
    "consensus_loss": _consensus_loss,
    "td_loss_cola_qmix": _td_loss,
    "td_loss_cola_vdn_obs_input": lambda rng: _td_loss(rng, "cola_vdn", "observation"),
    "maddpg_critic_loss": _maddpg_critic,
    "maddpg_actor_loss": _maddpg_actor,
}


def run_suite(seed: int = 0, items: dict[str, Callable] | None = None, h: float = 1e-5) -> list[dict]:
    out = []
    for name, make in (ITEMS if items is None else items).items():
        start = time.perf_counter()
        f, params = make(np.random.default_rng([seed, len(out)]))
        err = finite_difference_check(f, params, h=h)
        out.append({"item": name, "max_rel_error": float(err), "passed": bool(err < TOLERANCE),
                    "n_params": int(sum(p.data.size for p in params)),
                    "seconds": time.perf_counter() - start})
    return out
