"""COLA-QMIX / COLA-VDN and their consensus-free baselines.

One recurrent agent network (shared by default, agent id appended to the
input) produces ``Q_a(tau^a, c^a, .)``; a VDN sum or QMIX monotonic mixer
produces ``Q_tot``.  The loss is the masked squared TD error against
``r + gamma * Q_tot_target(max_u' Q_a')`` with BPTT through whole episodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..consensus import ConsensusBuilder, ConsensusConfig
from ..nets import AgentQNet, Module, QmixMixer, VdnMixer
from ..optim import Optimizer, OptimizerConfig, clip_grad_norm
from ..tensor import NonFiniteError, Tensor, no_grad
from .buffers import Episode, EpisodeBatch
from .config import TrainConfig
from .exploration import epsilon_greedy


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    obs_dim: int
    state_dim: int
    n_actions: int = 0
    act_dim: int = 0
    episode_limit: int = 100


def env_spec(env) -> EnvSpec:
    return EnvSpec(n_agents=env.n_agents, obs_dim=env.obs_dim, state_dim=env.state_dim,
                   n_actions=getattr(env, "n_actions", 0), act_dim=getattr(env, "act_dim", 0),
                   episode_limit=env.episode_limit)


def agent_inputs(obs, last_actions, alive, n_actions: int) -> np.ndarray:
    """``[obs (zeroed when dead), one-hot last action, one-hot agent id]``.

    ``last_actions`` holds ``-1`` where there is no previous action.
    """
    obs = np.asarray(obs, dtype=np.float64)
    alive = np.asarray(alive, dtype=bool)
    last = np.asarray(last_actions)
    n = obs.shape[-2]
    onehot = np.zeros(last.shape + (n_actions,))
    valid = last >= 0
    onehot[valid, last[valid]] = 1.0
    ids = np.broadcast_to(np.eye(n), obs.shape[:-1] + (n,))
    return np.concatenate([obs * alive[..., None], onehot, ids], axis=-1)


def td_targets(rewards, terminated, next_agent_q, mixer, next_state, gamma: float) -> np.ndarray:
    """``y = r + gamma * (1 - terminal) * Q_tot_target(max_u Q_a(next), s')``.

    Per-agent maxima give the joint maximum because both mixers are monotone
    in every agent value.
    """
    with no_grad():
        best = np.max(np.asarray(next_agent_q), axis=-1)
        total = mixer(best, next_state).data
    return np.asarray(rewards) + gamma * (1.0 - np.asarray(terminated, dtype=np.float64)) * total


def _agent_stack(nets: list[AgentQNet], fn: str, x, consensus, extra=None):
    """Apply ``encode``/``head`` over the agent axis (-2), shared or per agent."""
    if len(nets) == 1:
        args = (x, consensus, extra) if fn == "encode" else (x, consensus)
        return getattr(nets[0], fn)(*args)
    outs = []
    for a, net in enumerate(nets):
        idx = (Ellipsis, a, slice(None))
        xa = x[idx] if isinstance(x, Tensor) else np.asarray(x)[idx]
        ca = None if consensus is None else np.asarray(consensus)[..., a]
        if fn == "encode":
            outs.append(net.encode(xa, ca, extra[idx]))
        else:
            outs.append(net.head(xa, ca))
    return T.stack(outs, axis=-2)


class ValueDecompositionLearner:
    def __init__(self, spec: EnvSpec, cfg: TrainConfig, rng: np.random.Generator):
        cfg = cfg.resolved()
        if cfg.family != "value":
            raise ValueError(f"{cfg.algorithm} is not a value-decomposition algorithm")
        self.cfg = cfg
        self.spec = spec
        self.n = spec.n_agents
        self.n_actions = spec.n_actions
        self.input_dim = spec.obs_dim + spec.n_actions + spec.n_agents
        self.hidden_mode = cfg.consensus_input == "hidden_state"
        at = "head" if self.hidden_mode else "input"
        n_nets = 1 if cfg.share_agent_params else self.n
        self.agents = [AgentQNet(self.input_dim, spec.n_actions, rng, k=cfg.k,
                                 embed_dim=cfg.embed_dim, hidden=cfg.hidden_dim,
                                 consensus=cfg.consensus, consensus_at=at)
                       for _ in range(n_nets)]
        self.mixer_state_dim = (spec.state_dim if cfg.state_access == "full"
                                else spec.n_agents * spec.obs_dim)
        if cfg.mixer == "qmix":
            self.mixer: Module = QmixMixer(self.n, self.mixer_state_dim, rng,
                                           embed_dim=cfg.mixer_embed_dim,
                                           hyper_hidden=cfg.hyper_hidden_dim)
        else:
            self.mixer = VdnMixer()
        self.target_agents = [a.clone() for a in self.agents]
        self.target_mixer = self.mixer.clone()
        self.builder: ConsensusBuilder | None = None
        if cfg.consensus:
            width = cfg.hidden_dim if self.hidden_mode else spec.obs_dim
            self.builder = ConsensusBuilder(width, rng, ConsensusConfig(
                k=cfg.k, hidden=cfg.cb_hidden_dim, tau_teacher=cfg.tau_teacher,
                tau_student=cfg.tau_student, center_momentum=cfg.center_momentum,
                teacher_momentum=cfg.teacher_momentum, learning_rate=cfg.cb_learning_rate,
                centering=cfg.centering))
        for prefix, mod in self.rl_modules().items():
            mod.label_parameters(prefix + ".")
        self.optimizer = Optimizer(self.rl_parameters(),
                                   OptimizerConfig(kind="rmsprop", learning_rate=cfg.learning_rate))
        self.updates = 0
        self.last_bootstrap = 0.0   # mean of y - r on the last batch

    # ------------------------------------------------------------ bookkeeping

    def rl_modules(self) -> dict[str, Module]:
        mods: dict[str, Module] = {f"agent{i}": a for i, a in enumerate(self.agents)}
        mods["mixer"] = self.mixer
        return mods

    def target_modules(self) -> dict[str, Module]:
        mods: dict[str, Module] = {f"target_agent{i}": a for i, a in enumerate(self.target_agents)}
        mods["target_mixer"] = self.target_mixer
        return mods

    def rl_parameters(self):
        return [p for m in self.rl_modules().values() for p in m.parameters()]

    def target_sync(self) -> None:
        for online, target in zip(self.agents, self.target_agents):
            target.copy_from(online)
        self.target_mixer.copy_from(self.mixer)

    def initial_hidden(self) -> np.ndarray:
        return np.zeros((self.n, self.cfg.hidden_dim))

    def mixer_state(self, obs, alive, state) -> np.ndarray:
        if self.cfg.state_access == "full":
            return np.asarray(state, dtype=np.float64)
        masked = np.asarray(obs) * np.asarray(alive, dtype=np.float64)[..., None]
        return masked.reshape(masked.shape[:-2] + (-1,))

    # ------------------------------------------------------------ acting

    def act(self, obs, alive, last_actions, hidden, epsilon: float, rng: np.random.Generator):
        """Return ``(actions, consensus, new_hidden, q_values)`` for one step."""
        alive = np.asarray(alive, dtype=bool)
        inputs = agent_inputs(obs[None], np.asarray(last_actions)[None], alive[None], self.n_actions)
        with no_grad():
            c = None
            if self.builder is not None and not self.hidden_mode:
                c = np.atleast_1d(self.builder.infer(np.asarray(obs) * alive[:, None]))[None]
            h = _agent_stack(self.agents, "encode", inputs, c, Tensor(np.asarray(hidden)[None]))
            if self.builder is not None and self.hidden_mode:
                c = np.atleast_1d(self.builder.infer(h.data[0]))[None]
            q = _agent_stack(self.agents, "head", h, c).data[0]
        actions = epsilon_greedy(q, epsilon, rng)
        actions = np.where(alive, actions, 0)
        consensus = c[0] if c is not None else np.full(self.n, -1)
        return actions, consensus, h.data[0], q

    # ------------------------------------------------------------ training

    def _inputs(self, batch: EpisodeBatch) -> np.ndarray:
        last = np.full(batch.obs.shape[:3], -1, dtype=np.int64)
        last[:, 1:] = batch.actions
        return agent_inputs(batch.obs, last, batch.alive, self.n_actions)

    def _hidden_sequence(self, nets, inputs, consensus) -> list[Tensor]:
        b, steps = inputs.shape[:2]
        h = Tensor(np.zeros((b, self.n, self.cfg.hidden_dim)))
        out = []
        for t in range(steps):
            c_t = None if consensus is None else consensus[:, t]
            h = _agent_stack(nets, "encode", inputs[:, t], c_t, h)
            out.append(h)
        return out

    def _consensus(self, batch: EpisodeBatch, hidden: np.ndarray | None) -> np.ndarray | None:
        if self.builder is None:
            return None
        if self.hidden_mode:
            return self.builder.infer(hidden)
        return self.builder.infer(batch.obs * batch.alive[..., None])

    def builder_features(self, batch: EpisodeBatch) -> np.ndarray:
        """Per-step builder inputs (B, T+1, n, width); hidden states are detached."""
        if not self.hidden_mode:
            return batch.obs
        with no_grad():
            hs = self._hidden_sequence(self.agents, self._inputs(batch), None)
        return np.stack([h.data for h in hs], axis=1)

    def update_builder(self, batch: EpisodeBatch) -> float | None:
        if self.builder is None:
            return None
        feats = self.builder_features(batch)[:, : batch.max_len]
        b, t = feats.shape[:2]
        alive = batch.alive[:, :t]
        return self.builder.train_step(feats.reshape((b * t,) + feats.shape[2:]),
                                       alive.reshape(b * t, self.n), batch.mask.reshape(-1) > 0)

    def rl_loss(self, batch: EpisodeBatch) -> Tensor:
        cfg = self.cfg
        inputs = self._inputs(batch)
        steps = batch.max_len
        consensus = None if self.hidden_mode else self._consensus(batch, None)
        hs = self._hidden_sequence(self.agents, inputs, consensus)
        if self.hidden_mode and self.builder is not None:
            consensus = self._consensus(batch, np.stack([h.data for h in hs], axis=1))
        h_all = T.stack(hs[:steps], axis=1)                          # (B, T, n, H)
        c_now = None if consensus is None else consensus[:, :steps]
        q = _agent_stack(self.agents, "head", h_all, c_now)         # (B, T, n, U)
        onehot = np.eye(self.n_actions)[batch.actions]
        chosen = T.tsum(T.mul(q, onehot), axis=-1)                   # (B, T, n)
        with no_grad():
            ths = self._hidden_sequence(self.target_agents, inputs, consensus)
            th_next = T.stack(ths[1:], axis=1)
            c_next = None if consensus is None else consensus[:, 1:]
            tq = _agent_stack(self.target_agents, "head", th_next, c_next).data
        ms = self.mixer_state(batch.obs, batch.alive, batch.state)
        y = td_targets(batch.rewards, batch.terminated, tq, self.target_mixer, ms[:, 1:], cfg.gamma)
        self.last_bootstrap = float(np.sum((y - batch.rewards) * batch.mask) / max(1.0, batch.mask.sum()))
        q_tot = self.mixer(chosen, ms[:, :steps])
        err = T.sub(q_tot, y)
        return T.mul(T.tsum(T.mul(T.square(err), batch.mask)), 1.0 / max(1.0, batch.mask.sum()))

    def update_rl(self, batch: EpisodeBatch) -> float:
        loss = self.rl_loss(batch)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteError(f"TD loss is {value} at update {self.updates}")
        self.optimizer.zero_grad()
        T.backward(loss)
        clip_grad_norm(self.optimizer.params, self.cfg.grad_clip)
        self.optimizer.step()
        self.updates += 1
        return value

    # ------------------------------------------------------------ persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, mod in {**self.rl_modules(), **self.target_modules()}.items():
            out.update({f"{prefix}.{k}": v for k, v in mod.state_dict().items()})
        if self.builder is not None:
            out.update({f"builder.{k}": v for k, v in self.builder.state_dict().items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for prefix, mod in {**self.rl_modules(), **self.target_modules()}.items():
            p = prefix + "."
            mod.load_state_dict({k[len(p):]: v for k, v in state.items() if k.startswith(p)})
        if self.builder is not None:
            self.builder.load_state_dict({k[8:]: v for k, v in state.items() if k.startswith("builder.")})


def rollout_episode(env, learner: ValueDecompositionLearner, epsilon: float,
                    rng: np.random.Generator, record_values: bool = False):
    """Run one episode; returns ``(Episode, info)``.

    ``info`` carries the return, capture flag and (optionally) the Q-value of
    each agent's chosen action per step.
    """
    state, obs = env.reset(rng)
    n = env.n_agents
    obs_l, state_l, alive_l, act_l, rew_l, term_l, cons_l, val_l = [], [], [], [], [], [], [], []
    hidden = learner.initial_hidden()
    last = np.full(n, -1, dtype=np.int64)
    captured = False
    done = False
    while not done:
        obs_l.append(obs)
        state_l.append(env.state_vector(state))
        alive_l.append(state.alive.copy())
        actions, consensus, hidden, q = learner.act(obs, state.alive, last, hidden, epsilon, rng)
        cons_l.append(consensus)
        if record_values:
            val_l.append(q[np.arange(n), actions])
        state, reward, obs, done = env.step(state, actions.astype(np.int64))
        captured = captured or state.events > 0
        act_l.append(actions)
        rew_l.append(reward)
        term_l.append(bool(getattr(state, "captured", False)) or (done and state.t < env.episode_limit))
        last = actions.astype(np.int64)
    obs_l.append(obs)
    state_l.append(env.state_vector(state))
    alive_l.append(state.alive.copy())
    _, consensus, _, _ = learner.act(obs, state.alive, last, hidden, 0.0, np.random.default_rng(0))
    cons_l.append(consensus)
    episode = Episode(obs=np.array(obs_l), state=np.array(state_l), alive=np.array(alive_l),
                      actions=np.array(act_l, dtype=np.int64), rewards=np.array(rew_l),
                      terminated=np.array(term_l, dtype=bool),
                      consensus=np.array(cons_l, dtype=np.int64))
    info = {"return": float(np.sum(rew_l)), "captured": bool(captured), "values": val_l}
    return episode, info
