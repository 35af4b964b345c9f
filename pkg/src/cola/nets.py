"""Function approximators: MLPs, GRU cells, consensus embeddings, agent Q-nets,
VDN/QMIX mixers and MADDPG actor/critic."""

from __future__ import annotations

import copy
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor, ShapeError

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh, "elu": T.elu, "none": None}


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Parameter container.  Parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ShapeError(f"{name}: expected {p.data.shape}, got {state[name].shape}")
            p.data[...] = state[name]

    def copy_from(self, other: "Module") -> None:
        """Hard copy of another module's parameter values (target sync)."""
        for (_, mine), (_, theirs) in zip(self.named_parameters(), other.named_parameters()):
            mine.data[...] = theirs.data

    def clone(self) -> "Module":
        twin = copy.deepcopy(self)
        for p in twin.parameters():
            p.grad = None
            p.state = {}
        return twin

    def label_parameters(self, prefix: str = "") -> "Module":
        """Store dotted names on the parameters so optimizer errors can cite them."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = Parameter(_uniform(rng, (n_in, n_out), n_in))
        self.bias = Parameter(_uniform(rng, (n_out,), n_in))

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class MLP(Module):
    def __init__(self, widths: list[int], rng: np.random.Generator,
                 hidden_activation: str = "relu", output_activation: str = "none"):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        self.widths = list(widths)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x) -> Tensor:
        act = ACTIVATIONS[self.hidden_activation]
        out_act = ACTIVATIONS[self.output_activation]
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = act(x)
            elif out_act is not None:
                x = out_act(x)
        return x


class GRUCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.n_in = n_in
        self.hidden = hidden
        self.w_x = Parameter(_uniform(rng, (n_in, 3 * hidden), n_in))
        self.w_h = Parameter(_uniform(rng, (hidden, 3 * hidden), hidden))
        self.b_x = Parameter(_uniform(rng, (3 * hidden,), hidden))
        self.b_h = Parameter(_uniform(rng, (3 * hidden,), hidden))

    def initial_state(self, batch: int | None = None) -> Tensor:
        shape = (self.hidden,) if batch is None else (batch, self.hidden)
        return Tensor(np.zeros(shape))

    def __call__(self, x, h) -> Tensor:
        x, h = T.as_tensor(x), T.as_tensor(h)
        if x.shape[-1] != self.n_in or h.shape[-1] != self.hidden:
            raise ShapeError(f"GRU expects input width {self.n_in} and hidden width "
                             f"{self.hidden}, got {x.shape} and {h.shape}")
        return T.gru_cell(x, h, self.w_x, self.w_h, self.b_x, self.b_h)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator):
        self.table = Parameter(_uniform(rng, (num, dim), num))

    @property
    def num(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def __call__(self, index) -> Tensor:
        return T.embedding(self.table, index)


class ConsensusSlot(Module):
    """Dense consensus input: an embedding of the class index, or a constant
    zero block of the same width when consensus is disabled."""

    def __init__(self, k: int, dim: int, enabled: bool, rng: np.random.Generator):
        self.enabled = enabled
        self.dim = dim
        self.k = k
        if enabled:
            self.embed = Embedding(k, dim, rng)

    def __call__(self, index, batch_shape: tuple[int, ...]) -> Tensor:
        if not self.enabled:
            return Tensor(np.zeros(batch_shape + (self.dim,)))
        if index is None:
            raise ValueError("consensus index required when consensus is enabled")
        return self.embed(index)


class AgentQNet(Module):
    """Recurrent agent utility network ``Q_a(tau, c, .)``.

    ``consensus_at="input"`` concatenates the consensus embedding with
    observation, last action and agent id before the encoder.  ``"head"`` joins
    it with the GRU output just before the Q projection, which lets the
    consensus be inferred from the current hidden state without a cycle.
    """

    def __init__(self, input_dim: int, n_actions: int, rng: np.random.Generator, k: int = 4,
                 embed_dim: int = 8, hidden: int = 64, consensus: bool = True,
                 consensus_at: str = "input"):
        if consensus_at not in ("input", "head"):
            raise ValueError(f"consensus_at must be 'input' or 'head', got {consensus_at!r}")
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.consensus_at = consensus_at
        self.slot = ConsensusSlot(k, embed_dim, consensus, rng)
        extra_in = embed_dim if consensus_at == "input" else 0
        extra_head = embed_dim if consensus_at == "head" else 0
        self.encoder = Linear(input_dim + extra_in, hidden, rng)
        self.gru = GRUCell(hidden, hidden, rng)
        self.out = Linear(hidden + extra_head, n_actions, rng)

    @property
    def hidden(self) -> int:
        return self.gru.hidden

    def initial_state(self, batch: int | None = None) -> Tensor:
        return self.gru.initial_state(batch)

    def encode(self, inputs, consensus, h) -> Tensor:
        inputs = T.as_tensor(inputs)
        if inputs.shape[-1] != self.input_dim:
            raise ShapeError(f"agent input width {inputs.shape[-1]} != {self.input_dim}")
        if self.consensus_at == "input":
            inputs = T.concat([inputs, self.slot(consensus, inputs.shape[:-1])], axis=-1)
        x = T.relu(self.encoder(inputs))
        return self.gru(x, h)

    def head(self, h, consensus) -> Tensor:
        h = T.as_tensor(h)
        if self.consensus_at == "head":
            h = T.concat([h, self.slot(consensus, h.shape[:-1])], axis=-1)
        return self.out(h)

    def __call__(self, inputs, consensus, h) -> tuple[Tensor, Tensor]:
        h_new = self.encode(inputs, consensus, h)
        return self.head(h_new, consensus), h_new

    def dead_input_rows(self) -> dict[str, np.ndarray]:
        """Parameter entries that only ever multiply the constant zero slot."""
        if self.slot.enabled:
            return {}
        if self.consensus_at == "input":
            rows = np.arange(self.input_dim, self.input_dim + self.slot.dim)
            return {"encoder.weight": rows}
        rows = np.arange(self.hidden, self.hidden + self.slot.dim)
        return {"out.weight": rows}


class VdnMixer(Module):
    def __call__(self, agent_qs, state=None) -> Tensor:
        return T.tsum(T.as_tensor(agent_qs), axis=-1)


class QmixMixer(Module):
    """Monotonic mixing network; hypernetworks turn the state into non-negative
    weights via ``abs``."""

    def __init__(self, n_agents: int, state_dim: int, rng: np.random.Generator,
                 embed_dim: int = 32, hyper_hidden: int = 64):
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed_dim = embed_dim
        self.hyper_w1 = MLP([state_dim, hyper_hidden, n_agents * embed_dim], rng)
        self.hyper_b1 = Linear(state_dim, embed_dim, rng)
        self.hyper_w2 = MLP([state_dim, hyper_hidden, embed_dim], rng)
        self.value = MLP([state_dim, embed_dim, 1], rng)

    def __call__(self, agent_qs, state) -> Tensor:
        qs, s = T.as_tensor(agent_qs), T.as_tensor(state)
        if qs.shape[-1] != self.n_agents or s.shape[-1] != self.state_dim:
            raise ShapeError(f"mixer expects {self.n_agents} agent values and state width "
                             f"{self.state_dim}, got {qs.shape} and {s.shape}")
        lead = qs.shape[:-1]
        w1 = T.absolute(self.hyper_w1(s)).reshape(lead + (self.n_agents, self.embed_dim))
        b1 = self.hyper_b1(s)
        mixed = T.tsum(T.mul(qs.reshape(lead + (self.n_agents, 1)), w1), axis=-2)
        hidden = T.elu(T.add(mixed, b1))
        w2 = T.absolute(self.hyper_w2(s))
        v = self.value(s).reshape(lead)
        return T.add(T.tsum(T.mul(hidden, w2), axis=-1), v)


class Actor(Module):
    """Deterministic policy ``mu_a(z, c) -> [-1, 1]^act_dim``."""

    def __init__(self, obs_dim: int, act_dim: int, rng: np.random.Generator, k: int = 4,
                 embed_dim: int = 8, hidden: int = 64, consensus: bool = True):
        self.obs_dim = obs_dim
        self.slot = ConsensusSlot(k, embed_dim, consensus, rng)
        self.body = MLP([obs_dim + embed_dim, hidden, hidden, act_dim], rng,
                        hidden_activation="relu", output_activation="tanh")

    def __call__(self, obs, consensus) -> Tensor:
        obs = T.as_tensor(obs)
        if obs.shape[-1] != self.obs_dim:
            raise ShapeError(f"actor expects observation width {self.obs_dim}, got {obs.shape}")
        return self.body(T.concat([obs, self.slot(consensus, obs.shape[:-1])], axis=-1))

    def dead_input_rows(self) -> dict[str, np.ndarray]:
        if self.slot.enabled:
            return {}
        return {"body.layers.0.weight": np.arange(self.obs_dim, self.obs_dim + self.slot.dim)}


class Critic(Module):
    """Centralised ``Q_a(x, c^a, u^1..u^n)``; ``x`` is the concatenated observations."""

    def __init__(self, state_dim: int, joint_act_dim: int, rng: np.random.Generator, k: int = 4,
                 embed_dim: int = 8, hidden: int = 64, consensus: bool = True):
        self.state_dim = state_dim
        self.joint_act_dim = joint_act_dim
        self.slot = ConsensusSlot(k, embed_dim, consensus, rng)
        self.body = MLP([state_dim + embed_dim + joint_act_dim, hidden, hidden, 1], rng,
                        hidden_activation="relu")

    def __call__(self, state, consensus, joint_action) -> Tensor:
        state, joint_action = T.as_tensor(state), T.as_tensor(joint_action)
        if state.shape[-1] != self.state_dim or joint_action.shape[-1] != self.joint_act_dim:
            raise ShapeError(f"critic expects widths ({self.state_dim}, {self.joint_act_dim}), "
                             f"got {state.shape} and {joint_action.shape}")
        x = T.concat([state, self.slot(consensus, state.shape[:-1]), joint_action], axis=-1)
        out = self.body(x)
        return out.reshape(out.shape[:-1])

    def dead_input_rows(self) -> dict[str, np.ndarray]:
        if self.slot.enabled:
            return {}
        return {"body.layers.0.weight": np.arange(self.state_dim, self.state_dim + self.slot.dim)}


def rl_parameter_count(module: Module) -> int:
    """Parameters that can carry an RL gradient: rows wired to the constant zero
    consensus slot of a baseline net are left out."""
    total = module.num_parameters()
    dead = getattr(module, "dead_input_rows", lambda: {})()
    params = dict(module.named_parameters())
    for name, rows in dead.items():
        total -= len(rows) * params[name].shape[1]
    return total
