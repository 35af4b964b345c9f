"""COLA-MADDPG and plain MADDPG.

Per-agent deterministic actors ``mu_a(z^a, c^a)`` and centralised critics
``Q_a(x, c^a, u^1..u^n)`` where ``x`` concatenates every agent's observation.
Consensus indices ``c`` and ``c'`` are recomputed by the current student at
update time.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..consensus import ConsensusBuilder, ConsensusConfig
from ..nets import Actor, Critic, Module
from ..optim import Optimizer, OptimizerConfig, clip_grad_norm
from ..tensor import NonFiniteError, Tensor, no_grad
from .buffers import TransitionBatch
from .config import TrainConfig
from .value_decomposition import EnvSpec


def polyak_update(online: Module, target: Module, rho: float) -> None:
    """``target <- rho * target + (1 - rho) * online``."""
    src = dict(online.named_parameters())
    for name, p in target.named_parameters():
        p.data = rho * p.data + (1.0 - rho) * src[name].data


class MaddpgLearner:
    def __init__(self, spec: EnvSpec, cfg: TrainConfig, rng: np.random.Generator):
        cfg = cfg.resolved()
        if cfg.family != "actor_critic":
            raise ValueError(f"{cfg.algorithm} is not an actor-critic algorithm")
        self.cfg = cfg
        self.spec = spec
        self.n = spec.n_agents
        self.act_dim = spec.act_dim
        common = dict(k=cfg.k, embed_dim=cfg.embed_dim, hidden=cfg.hidden_dim, consensus=cfg.consensus)
        self.actors = [Actor(spec.obs_dim, spec.act_dim, rng, **common) for _ in range(self.n)]
        self.critics = [Critic(self.n * spec.obs_dim, self.n * spec.act_dim, rng, **common)
                        for _ in range(self.n)]
        self.target_actors = [a.clone() for a in self.actors]
        self.target_critics = [c.clone() for c in self.critics]
        self.builder: ConsensusBuilder | None = None
        if cfg.consensus:
            self.builder = ConsensusBuilder(spec.obs_dim, rng, ConsensusConfig(
                k=cfg.k, hidden=cfg.cb_hidden_dim, tau_teacher=cfg.tau_teacher,
                tau_student=cfg.tau_student, center_momentum=cfg.center_momentum,
                teacher_momentum=cfg.teacher_momentum, learning_rate=cfg.cb_learning_rate,
                centering=cfg.centering))
        for prefix, mod in self.rl_modules().items():
            mod.label_parameters(prefix + ".")
        opt = OptimizerConfig(kind="adam", learning_rate=cfg.learning_rate)
        self.actor_opts = [Optimizer(a.parameters(), opt) for a in self.actors]
        self.critic_opts = [Optimizer(c.parameters(), opt) for c in self.critics]
        self.updates = 0
        self.last_bootstrap = 0.0

    def rl_modules(self) -> dict[str, Module]:
        mods: dict[str, Module] = {f"actor{i}": a for i, a in enumerate(self.actors)}
        mods.update({f"critic{i}": c for i, c in enumerate(self.critics)})
        return mods

    def target_modules(self) -> dict[str, Module]:
        mods: dict[str, Module] = {f"target_actor{i}": a for i, a in enumerate(self.target_actors)}
        mods.update({f"target_critic{i}": c for i, c in enumerate(self.target_critics)})
        return mods

    def rl_parameters(self):
        return [p for m in self.rl_modules().values() for p in m.parameters()]

    def consensus(self, obs, alive) -> np.ndarray | None:
        if self.builder is None:
            return None
        masked = np.asarray(obs) * np.asarray(alive, dtype=np.float64)[..., None]
        return np.asarray(self.builder.infer(masked))

    # ------------------------------------------------------------ acting

    def act(self, obs, alive, sigma: float, rng: np.random.Generator):
        """Noisy (``sigma > 0``) or greedy actions in ``[-1, 1]``; returns ``(actions, consensus)``."""
        alive = np.asarray(alive, dtype=bool)
        obs = np.asarray(obs, dtype=np.float64) * alive[:, None]
        c = self.consensus(obs, alive)
        with no_grad():
            u = np.stack([actor(obs[a], None if c is None else c[a]).data
                          for a, actor in enumerate(self.actors)])
        noise = rng.normal(0.0, 1.0, size=u.shape)   # drawn even when sigma is 0
        u = np.clip(u + sigma * noise, -1.0, 1.0) * alive[:, None]
        return u, (c if c is not None else np.full(self.n, -1))

    # ------------------------------------------------------------ training

    def update_builder(self, batch: TransitionBatch) -> float | None:
        if self.builder is None:
            return None
        return self.builder.train_step(batch.obs, batch.alive)

    def _views(self, batch: TransitionBatch):
        """Masked per-agent observations, their concatenations and consensus."""
        z = batch.obs * batch.alive[..., None]
        nz = batch.next_obs * batch.next_alive[..., None]
        c = self.consensus(z, batch.alive)
        nc = self.consensus(nz, batch.next_alive)
        return z, nz, c, nc

    @staticmethod
    def _pick(c, a):
        return None if c is None else c[..., a]

    def critic_targets(self, batch: TransitionBatch, agent: int, views=None) -> np.ndarray:
        """``y = r + gamma * (1 - terminal) * Q'_a(x', c'^a, mu'(z', c'))``."""
        _, nz, _, nc = views or self._views(batch)
        with no_grad():
            nu = np.concatenate([self.target_actors[b](nz[:, b], self._pick(nc, b)).data
                                 for b in range(self.n)], axis=-1)
            nq = self.target_critics[agent](nz.reshape(len(nz), -1), self._pick(nc, agent), nu).data
        y = batch.rewards + self.cfg.gamma * (1.0 - batch.terminated.astype(np.float64)) * nq
        self.last_bootstrap = float(np.mean(y - batch.rewards))
        return y

    def critic_loss(self, batch: TransitionBatch, agent: int, views=None) -> Tensor:
        views = views or self._views(batch)
        z, _, c, _ = views
        y = self.critic_targets(batch, agent, views)
        q = self.critics[agent](z.reshape(len(z), -1), self._pick(c, agent),
                                batch.actions.reshape(len(y), -1))
        return T.mean(T.square(T.sub(q, y)))

    def actor_loss(self, batch: TransitionBatch, agent: int, views=None) -> Tensor:
        """``-mean Q_a`` with agent ``a``'s action from its current actor and the
        others' actions taken from the buffer (constants)."""
        z, _, c, _ = views or self._views(batch)
        u_a = self.actors[agent](z[:, agent], self._pick(c, agent))
        parts = [u_a if b == agent else batch.actions[:, b] for b in range(self.n)]
        q = self.critics[agent](z.reshape(len(z), -1), self._pick(c, agent), T.concat(parts, axis=-1))
        return T.mul(T.mean(q), -1.0)

    def _step(self, loss: Tensor, opt: Optimizer, what: str) -> float:
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteError(f"{what} loss is {value} at update {self.updates}")
        opt.zero_grad()
        T.backward(loss)
        clip_grad_norm(opt.params, self.cfg.actor_critic_grad_clip)
        opt.step()
        return value

    def update_rl(self, batch: TransitionBatch) -> float:
        views = self._views(batch)
        critic_losses = []
        for a in range(self.n):
            critic_losses.append(self._step(self.critic_loss(batch, a, views), self.critic_opts[a],
                                            f"critic {a}"))
            self._step(self.actor_loss(batch, a, views), self.actor_opts[a], f"actor {a}")
            self.critic_opts[a].zero_grad()   # the actor pass leaves gradients on the critic
        for online, target in zip(self.actors + self.critics, self.target_actors + self.target_critics):
            polyak_update(online, target, self.cfg.polyak)
        self.updates += 1
        return float(np.mean(critic_losses))

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
