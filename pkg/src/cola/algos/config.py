"""Training hyperparameters shared by both algorithm families."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

VALUE_ALGOS = ("cola_qmix", "qmix", "cola_vdn", "vdn")
ACTOR_CRITIC_ALGOS = ("cola_maddpg", "maddpg")
ALGORITHMS = VALUE_ALGOS + ACTOR_CRITIC_ALGOS

# family defaults for fields left as None
VALUE_DEFAULTS = dict(gamma=0.99, batch_size=32, learning_rate=5e-4, buffer_capacity=5000,
                      min_buffer=32, optimizer="rmsprop")
ACTOR_CRITIC_DEFAULTS = dict(gamma=0.95, batch_size=1024, learning_rate=0.01,
                             buffer_capacity=1_000_000, min_buffer=5000, optimizer="adam")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "cola_qmix"
    k: int = 4
    gamma: float | None = None
    batch_size: int | None = None
    learning_rate: float | None = None
    buffer_capacity: int | None = None
    min_buffer: int | None = None
    target_update_interval: int = 200      # episodes, value decomposition
    update_every: int = 100                # env steps, MADDPG
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 10_000
    sigma_start: float = 0.3
    sigma_end: float = 0.05
    sigma_anneal_fraction: float = 0.5
    polyak: float = 0.99
    grad_clip: float = 10.0
    actor_critic_grad_clip: float = 0.5
    consensus_input: str = "auto"          # auto | observation | hidden_state
    state_access: str = "full"             # full | observations
    share_agent_params: bool = True
    embed_dim: int = 8
    hidden_dim: int = 64
    mixer_embed_dim: int = 32
    hyper_hidden_dim: int = 64
    cb_learning_rate: float = 1e-3
    cb_hidden_dim: int = 64
    tau_teacher: float = 0.04
    tau_student: float = 0.1
    center_momentum: float = 0.9
    teacher_momentum: float = 0.996
    centering: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("target_update_interval", "update_every", "k", "embed_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.consensus_input not in ("auto", "observation", "hidden_state"):
            raise ValueError(f"consensus_input must be auto, observation or hidden_state")
        if self.state_access not in ("full", "observations"):
            raise ValueError("state_access must be full or observations")
        for name in ("learning_rate", "cb_learning_rate"):
            value = getattr(self, name)
            if value is not None and not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not 0.0 <= self.polyak <= 1.0:
            raise ValueError("polyak must lie in [0, 1]")

    @property
    def family(self) -> str:
        return "value" if self.algorithm in VALUE_ALGOS else "actor_critic"

    @property
    def consensus(self) -> bool:
        return self.algorithm.startswith("cola_")

    @property
    def mixer(self) -> str | None:
        if self.family != "value":
            return None
        return "qmix" if self.algorithm.endswith("qmix") else "vdn"

    def resolved(self) -> "TrainConfig":
        """Copy with every family-dependent ``None`` filled in."""
        defaults = VALUE_DEFAULTS if self.family == "value" else ACTOR_CRITIC_DEFAULTS
        updates = {k: v for k, v in defaults.items()
                   if k in {f.name for f in fields(self)} and getattr(self, k) is None}
        cfg = replace(self, **updates)
        if cfg.consensus_input == "auto":
            cfg = replace(cfg, consensus_input="hidden_state" if cfg.family == "value" else "observation")
        return cfg

    @property
    def optimizer(self) -> str:
        return VALUE_DEFAULTS["optimizer"] if self.family == "value" else ACTOR_CRITIC_DEFAULTS["optimizer"]
