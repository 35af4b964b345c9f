"""Consensus builder: a student/teacher self-distillation pair that maps each
agent's local view to one of ``K`` discrete classes.

The teacher distribution is ``Softmax((g_T(x) - center) / tau_T)``, the student
distribution ``Softmax(g_S(x) / tau_S)``.  The loss sums the cross-entropy
``H(P_T(z^a), P_S(z^b))`` over ordered pairs of distinct alive agents that saw
the same state.  Only the student receives gradients; the teacher and the
center track it by exponential moving averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nets import MLP
from .optim import Optimizer, OptimizerConfig
from .tensor import NonFiniteError, Tensor, no_grad


@dataclass(frozen=True)
class ConsensusConfig:
    k: int = 4
    hidden: int = 64
    tau_teacher: float = 0.04
    tau_student: float = 0.1
    center_momentum: float = 0.9
    teacher_momentum: float = 0.996
    learning_rate: float = 1e-3
    centering: bool = True


class ConsensusBuilder:
    def __init__(self, input_dim: int, rng: np.random.Generator,
                 config: ConsensusConfig = ConsensusConfig()):
        if config.k < 1:
            raise ValueError("k must be positive")
        self.config = config
        self.input_dim = input_dim
        self.k = config.k
        self.student = MLP([input_dim, config.hidden, config.hidden, config.k], rng,
                           hidden_activation="tanh")
        self.student.label_parameters("student.")
        self.teacher = self.student.clone().label_parameters("teacher.")
        self.center = np.zeros(config.k)
        self.optimizer = Optimizer(self.student.parameters(),
                                   OptimizerConfig(kind="adam", learning_rate=config.learning_rate))
        self.steps = 0

    # ------------------------------------------------------------ distributions

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise T.ShapeError(f"consensus input width {x.shape[-1]} != {self.input_dim}")
        return x

    def teacher_logits(self, x) -> np.ndarray:
        with no_grad():
            return self.teacher(self._check(x)).data

    def teacher_probs(self, x) -> np.ndarray:
        with no_grad():
            return T.softmax_with_temperature(self.teacher_logits(x), self.center,
                                              self.config.tau_teacher).data

    def student_logits(self, x) -> Tensor:
        return self.student(self._check(x))

    def student_probs(self, x) -> Tensor:
        return T.softmax_with_temperature(self.student_logits(x), 0.0, self.config.tau_student)

    def infer(self, x):
        """Class index per input row: ``argmax`` of the student distribution.

        Softmax is monotone, so the argmax of the raw logits is used directly;
        ``np.argmax`` breaks ties toward the lowest index.
        """
        with no_grad():
            logits = self.student(self._check(x)).data
        c = np.argmax(logits, axis=-1)
        return int(c) if np.ndim(c) == 0 else c

    # ------------------------------------------------------------ loss

    @staticmethod
    def pair_weights(alive: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
        """``w[t, a, b] = 1`` for alive ``a != b`` on valid step ``t``."""
        alive = np.asarray(alive, dtype=np.float64)
        n = alive.shape[-1]
        w = alive[:, :, None] * alive[:, None, :] * (1.0 - np.eye(n))[None]
        if valid is not None:
            w = w * np.asarray(valid, dtype=np.float64)[:, None, None]
        return w

    def consensus_loss(self, features, alive, valid=None) -> Tensor:
        """Mean over steps of ``sum_{a != b} H(P_T(z^a), P_S(z^b))``.

        ``features`` is (steps, agents, width); ``alive`` is (steps, agents).
        Dead views are replaced by zeros before either network sees them.
        """
        feats = self._check(features)
        alive = np.asarray(alive, dtype=bool)
        feats = np.where(alive[..., None], feats, 0.0)
        steps, n, d = feats.shape
        flat = feats.reshape(steps * n, d)
        p_t = self.teacher_probs(flat).reshape(steps, n, 1, self.k)
        p_s = self.student_probs(flat).reshape((steps, 1, n, self.k))
        h = T.cross_entropy(p_t, p_s)
        w = self.pair_weights(alive, valid)
        denom = float(steps if valid is None else max(1, int(np.sum(valid))))
        return T.mul(T.tsum(T.mul(h, w)), 1.0 / denom)

    # ------------------------------------------------------------ updates

    def update_center(self, teacher_logits_batch) -> np.ndarray:
        batch = np.asarray(teacher_logits_batch, dtype=np.float64).reshape(-1, self.k)
        if batch.shape[0] == 0 or not self.config.centering:
            return self.center
        m = self.config.center_momentum
        self.center = m * self.center + (1.0 - m) * batch.mean(axis=0)
        return self.center

    def update_teacher(self) -> None:
        m = self.config.teacher_momentum
        for pt, ps in zip(self.teacher.parameters(), self.student.parameters()):
            if pt.data.shape != ps.data.shape:
                raise T.ShapeError("teacher and student shapes differ")
            pt.data *= m
            pt.data += (1.0 - m) * ps.data

    def train_step(self, features, alive, valid=None) -> float:
        """One student gradient step, then center and teacher EMA updates."""
        feats = self._check(features)
        alive = np.asarray(alive, dtype=bool)
        loss = self.consensus_loss(feats, alive, valid)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteError(f"consensus loss is {value} at builder step {self.steps}")
        has_pairs = bool(self.pair_weights(alive, valid).any())
        if has_pairs:
            self.optimizer.zero_grad()
            T.backward(loss)
            self.optimizer.step()
        use = alive if valid is None else alive & np.asarray(valid, dtype=bool)[:, None]
        views = np.where(alive[..., None], feats, 0.0)[use]
        if views.shape[0]:
            self.update_center(self.teacher_logits(views))
        self.update_teacher()
        self.steps += 1
        return value

    # ------------------------------------------------------------ persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"student.{k}": v for k, v in self.student.state_dict().items()}
        out.update({f"teacher.{k}": v for k, v in self.teacher.state_dict().items()})
        out["center"] = self.center.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.student.load_state_dict({k[8:]: v for k, v in state.items() if k.startswith("student.")})
        self.teacher.load_state_dict({k[8:]: v for k, v in state.items() if k.startswith("teacher.")})
        self.center = np.array(state["center"], dtype=np.float64)

    def parameter_arrays(self) -> list[np.ndarray]:
        """Everything the builder owns, for isolation hashing."""
        return ([p.data for p in self.student.parameters()]
                + [p.data for p in self.teacher.parameters()] + [self.center])


def pairwise_agreement(classes, alive=None) -> float:
    """Fraction of alive agent pairs (per step) that inferred the same class."""
    classes = np.asarray(classes)
    alive = np.ones(classes.shape, dtype=bool) if alive is None else np.asarray(alive, dtype=bool)
    same = classes[:, :, None] == classes[:, None, :]
    n = classes.shape[1]
    mask = alive[:, :, None] & alive[:, None, :] & ~np.eye(n, dtype=bool)[None]
    total = int(mask.sum())
    return float((same & mask).sum() / total) if total else float("nan")


def marginal_entropy(classes, k: int, alive=None) -> float:
    """Entropy (nats) of the empirical class distribution over alive views."""
    classes = np.asarray(classes)
    if alive is not None:
        classes = classes[np.asarray(alive, dtype=bool)]
    counts = np.bincount(classes.reshape(-1).astype(np.int64), minlength=k).astype(np.float64)
    if counts.sum() == 0:
        return float("nan")
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum()) + 0.0   # avoid -0.0 for a single class


def classes_used(classes, alive=None) -> int:
    classes = np.asarray(classes)
    if alive is not None:
        classes = classes[np.asarray(alive, dtype=bool)]
    return int(np.unique(classes).size)
