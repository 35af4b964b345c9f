"""Synthetic multi-view consensus benchmark.

``G`` latent states are seen by ``n`` agents through fixed random per-agent
linear maps plus Gaussian noise.  Only the consensus builder is trained; a
good builder assigns every agent's view of the same state to the same class.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..consensus import (ConsensusBuilder, ConsensusConfig, classes_used, marginal_entropy,
                         pairwise_agreement)


@dataclass(frozen=True)
class SyntheticMultiViewSpec:
    n_states: int = 8
    n_agents: int = 3
    k: int = 8
    latent_dim: int = 8
    view_dim: int = 16
    sigma_view: float = 0.05
    samples_per_state: int = 8      # per training batch
    steps: int = 2000
    eval_samples_per_state: int = 64
    learning_rate: float = 1e-3
    hidden: int = 64
    centering: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sigma_view < 0:
            raise ValueError("sigma_view must be non-negative")
        if min(self.n_states, self.n_agents, self.k, self.steps, self.samples_per_state) <= 0:
            raise ValueError("counts must be positive")


class MultiViewTask:
    def __init__(self, spec: SyntheticMultiViewSpec):
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 1])
        self.latents = rng.normal(size=(spec.n_states, spec.latent_dim))
        self.views = rng.normal(size=(spec.n_agents, spec.latent_dim, spec.view_dim)) \
            / np.sqrt(spec.latent_dim)

    def sample(self, per_state: int, rng: np.random.Generator):
        """Features (B, n, view_dim) and the latent state of each row."""
        s = self.spec
        states = np.repeat(np.arange(s.n_states), per_state)
        clean = np.einsum("bl,nlv->bnv", self.latents[states], self.views)
        noisy = clean + s.sigma_view * rng.normal(size=clean.shape)
        return noisy, states


def run_synthetic(spec: SyntheticMultiViewSpec, record_every: int = 0) -> dict:
    task = MultiViewTask(spec)
    data_rng = np.random.default_rng([spec.seed, 2])
    builder = ConsensusBuilder(spec.view_dim, np.random.default_rng([spec.seed, 3]), ConsensusConfig(
        k=spec.k, hidden=spec.hidden, learning_rate=spec.learning_rate, centering=spec.centering))
    alive = np.ones((spec.n_states * spec.samples_per_state, spec.n_agents), dtype=bool)
    losses = []
    for step in range(spec.steps):
        feats, _ = task.sample(spec.samples_per_state, data_rng)
        loss = builder.train_step(feats, alive)
        if record_every and step % record_every == 0 or step < 100:
            losses.append(float(loss))
    feats, states = task.sample(spec.eval_samples_per_state, np.random.default_rng([spec.seed, 4]))
    classes = np.asarray(builder.infer(feats))
    return {
        "agreement": pairwise_agreement(classes),
        "classes_used": classes_used(classes),
        "marginal_entropy": marginal_entropy(classes, spec.k),
        "entropy_floor": 0.5 * float(np.log(min(spec.k, spec.n_states))),
        "first_losses": losses[:100],
        "final_loss": float(builder.consensus_loss(feats, np.ones(classes.shape, dtype=bool)).item()),
        "centering": spec.centering,
        "seed": spec.seed,
    }


def synthetic_report(spec: SyntheticMultiViewSpec, seeds: int = 1) -> dict:
    """Both arms (centering on and off) over ``seeds`` seeds, with medians."""
    out = {"spec": asdict(spec), "arms": {}}
    for centering in (True, False):
        runs = [run_synthetic(replace(spec, centering=centering, seed=spec.seed + i))
                for i in range(seeds)]
        out["arms"]["centering_on" if centering else "centering_off"] = {
            "runs": [{k: v for k, v in r.items() if k != "first_losses"} for r in runs],
            "median_agreement": float(np.median([r["agreement"] for r in runs])),
            "median_classes_used": float(np.median([r["classes_used"] for r in runs])),
            "median_marginal_entropy": float(np.median([r["marginal_entropy"] for r in runs])),
        }
    return out
