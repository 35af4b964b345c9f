"""Outer training loops for both algorithm families.

``train`` owns the rng streams, replay, update cadence, target maintenance,
periodic greedy evaluation, metrics emission and the run artifacts.  With
``audit=True`` every update is bracketed by parameter hashes that prove the
builder and RL updates never touch each other's parameters.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..consensus import marginal_entropy, pairwise_agreement
from .buffers import EpisodeBuffer, TransitionBuffer
from .config import TrainConfig
from .exploration import GaussianNoise, LinearSchedule
from .maddpg import MaddpgLearner
from .value_decomposition import ValueDecompositionLearner, env_spec, rollout_episode


class IsolationError(AssertionError):
    """An update modified parameters it must not touch."""


def hash_arrays(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def rl_hash(learner) -> str:
    mods = {**learner.rl_modules(), **learner.target_modules()}
    return hash_arrays(p.data for m in mods.values() for p in m.parameters())


def builder_hash(learner) -> str:
    if learner.builder is None:
        return ""
    return hash_arrays(learner.builder.parameter_arrays())


@dataclass
class IsolationAudit:
    builder_updates_checked: int = 0
    rl_updates_checked: int = 0

    def guarded(self, learner, kind: str, fn, batch):
        """Run ``fn(batch)`` and assert the other side's parameters are untouched."""
        watch = rl_hash if kind == "builder" else builder_hash
        before = watch(learner)
        out = fn(batch)
        if watch(learner) != before:
            other = "RL" if kind == "builder" else "consensus-builder"
            raise IsolationError(f"{kind} update changed {other} parameters")
        if kind == "builder":
            self.builder_updates_checked += 1
        else:
            self.rl_updates_checked += 1
        return out


@dataclass
class RunResult:
    metrics: list[dict]
    final: dict
    learner: object
    audit: IsolationAudit | None = None
    trace: list[tuple] = field(default_factory=list)
    run_dir: Path | None = None


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def _mean_or_none(values):
    return float(np.mean(values)) if values else None


# --------------------------------------------------------------- evaluation

def _consensus_stats(cons_list, alive_list, k):
    if not cons_list or all(c is None for c in cons_list):
        return None, None
    classes = np.concatenate(cons_list, axis=0)
    alive = np.concatenate(alive_list, axis=0)
    if np.all(classes < 0):
        return None, None
    return marginal_entropy(classes, k, alive), pairwise_agreement(classes, alive)


def evaluate_value(env, learner, episodes: int, rng, trace: bool = False):
    returns, caught, cons, alive, rows, trajectories = [], [], [], [], [], []
    for e in range(episodes):
        ep, info = rollout_episode(env, learner, 0.0, rng, record_values=trace)
        returns.append(info["return"])
        caught.append(info["captured"])
        cons.append(ep.consensus[:-1])
        alive.append(ep.alive[:-1])
        if trace:
            for t in range(ep.length):
                for a in range(env.n_agents):
                    rows.append((e, t, a, int(ep.consensus[t, a]), int(ep.alive[t, a]),
                                 float(info["values"][t][a])))
            trajectories.append(ep)
    return returns, caught, cons, alive, rows, trajectories


def evaluate_actor_critic(env, learner: MaddpgLearner, episodes: int, rng, trace: bool = False):
    from ..tensor import no_grad

    returns, caught, cons, alive, rows, trajectories = [], [], [], [], [], []
    for e in range(episodes):
        state, obs = env.reset(rng)
        done, total, t, events = False, 0.0, 0, 0
        ep_cons, ep_alive, steps = [], [], []
        while not done:
            u, c = learner.act(obs, state.alive, 0.0, rng)
            if trace:
                x = (obs * state.alive[:, None]).reshape(1, -1)
                with no_grad():
                    vals = [learner.critics[a](x, None if c[a] < 0 else np.array([c[a]]),
                                               u.reshape(1, -1)).data[0] for a in range(env.n_agents)]
                for a in range(env.n_agents):
                    rows.append((e, t, a, int(c[a]), int(state.alive[a]), float(vals[a])))
            ep_cons.append(c)
            ep_alive.append(state.alive.copy())
            nxt, r, obs, done = env.step(state, u)
            if trace:
                steps.append((state, u, r, c))
            state = nxt
            total += r
            t += 1
        returns.append(total)
        caught.append(state.events > 0)
        cons.append(np.array(ep_cons))
        alive.append(np.array(ep_alive))
        trajectories.append(steps)
    return returns, caught, cons, alive, rows, trajectories


def _state_summary(state) -> dict:
    return {"pos": np.asarray(state.pos).tolist(), "alive": np.asarray(state.alive).astype(int).tolist()}


def write_trajectory(path: Path, env, learner, family: str, rng) -> None:
    """One greedy episode as JSONL: ``{t, state, action, reward, consensus}`` per step."""
    with open(path, "w", encoding="utf-8") as fh:
        state, obs = env.reset(rng)
        hidden = learner.initial_hidden() if family == "value" else None
        last = np.full(env.n_agents, -1, dtype=np.int64)
        done = False
        while not done:
            if family == "value":
                u, c, hidden, _ = learner.act(obs, state.alive, last, hidden, 0.0, rng)
                last = u.astype(np.int64)
                action = u.astype(np.int64)
            else:
                u, c = learner.act(obs, state.alive, 0.0, rng)
                action = u
            nxt, r, obs, done = env.step(state, action)
            fh.write(_json_line({"t": int(state.t), "state": _state_summary(state),
                                 "action": np.asarray(action).tolist(), "reward": float(r),
                                 "consensus": np.asarray(c).astype(int).tolist()}) + "\n")
            state = nxt


# --------------------------------------------------------------- main loop

def make_learner(env, cfg: TrainConfig, rng):
    spec = env_spec(env)
    if cfg.family == "value":
        return ValueDecompositionLearner(spec, cfg, rng)
    return MaddpgLearner(spec, cfg, rng)


def random_policy_return(env, episodes: int, seed: int) -> float:
    """Mean return of uniform random actions (the criterion-6 floor)."""
    rng = np.random.default_rng([seed, 424242])
    totals = []
    for _ in range(episodes):
        state, obs = env.reset(rng)
        done, total = False, 0.0
        while not done:
            if hasattr(env, "act_dim"):
                u = rng.uniform(-1.0, 1.0, size=(env.n_agents, env.act_dim))
            else:
                u = rng.integers(env.n_actions, size=env.n_agents)
            state, r, obs, done = env.step(state, u)
            total += r
        totals.append(total)
    return float(np.mean(totals))


def train(env, cfg: TrainConfig, total_steps: int, seed: int, *, log_interval: int = 1000,
          eval_episodes: int = 16, final_eval_episodes: int = 64, out_dir: str | os.PathLike | None = None,
          audit: bool = False, record_trajectory: bool = False, save_checkpoint: bool = True) -> RunResult:
    """Train one learner; writes artifacts under ``out_dir`` when given.

    Any exception is recorded in ``error.json`` inside ``out_dir`` and re-raised.
    """
    run_dir = Path(out_dir) if out_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    progress = {"env_steps": 0, "episodes": 0}
    try:
        return _train(env, cfg.resolved(), total_steps, seed, log_interval, eval_episodes,
                      final_eval_episodes, run_dir, audit, record_trajectory, save_checkpoint, progress)
    except Exception as exc:
        if run_dir is not None:
            with open(run_dir / "error.json", "w", encoding="utf-8") as fh:
                json.dump({"error": type(exc).__name__, "message": str(exc), **progress,
                           "traceback": traceback.format_exc()}, fh, indent=2)
        raise


def _train(env, cfg, total_steps, seed, log_interval, eval_episodes, final_eval_episodes,
           run_dir, audit, record_trajectory, save_checkpoint, progress) -> RunResult:
    init_ss, explore_ss, sample_ss, eval_ss = np.random.SeedSequence(seed).spawn(4)
    learner = make_learner(env, cfg, np.random.default_rng(init_ss))
    explore_rng = np.random.default_rng(explore_ss)
    sample_rng = np.random.default_rng(sample_ss)
    eval_entropy = eval_ss.generate_state(1)[0]
    auditor = IsolationAudit() if audit else None
    family = cfg.family
    metrics: list[dict] = []
    metrics_fh = open(run_dir / "metrics.jsonl", "w", encoding="utf-8") if run_dir else None

    rl_losses: list[float] = []
    cb_losses: list[float] = []
    train_returns: list[float] = []

    def do_update(batch):
        if auditor is not None:
            cb = auditor.guarded(learner, "builder", learner.update_builder, batch)
            rl = auditor.guarded(learner, "rl", learner.update_rl, batch)
        else:
            cb = learner.update_builder(batch)
            rl = learner.update_rl(batch)
        rl_losses.append(rl)
        if cb is not None:
            cb_losses.append(cb)

    def evaluate(episodes: int, index: int, trace: bool = False):
        rng = np.random.default_rng([int(eval_entropy), index])
        fn = evaluate_value if family == "value" else evaluate_actor_critic
        return fn(env, learner, episodes, rng, trace)

    def log(steps, episodes, explore_value, index, final=False):
        n_eval = final_eval_episodes if final else eval_episodes
        returns, caught, cons, alive, rows, _ = evaluate(n_eval, index, trace=final)
        entropy, agreement = _consensus_stats(cons, alive, cfg.k)
        record = {
            "env_steps": int(steps), "episodes": int(episodes),
            "rl_loss": _mean_or_none(rl_losses), "cb_loss": _mean_or_none(cb_losses),
            "mean_train_return": _mean_or_none(train_returns),
            "mean_eval_return": float(np.mean(returns)),
            "capture_rate": float(np.mean(caught)),
            ("epsilon" if family == "value" else "sigma"): float(explore_value),
            "consensus_marginal_entropy": entropy,
            "pairwise_consensus_agreement": agreement,
            "td_bootstrap_mean": float(learner.last_bootstrap),
            "updates": int(learner.updates),
            "final": bool(final),
        }
        rl_losses.clear()
        cb_losses.clear()
        train_returns.clear()
        metrics.append(record)
        if metrics_fh is not None:
            metrics_fh.write(_json_line(record) + "\n")
            metrics_fh.flush()
        return record, rows

    steps = episodes = 0
    next_log = log_interval
    n_logs = 0
    try:
        if family == "value":
            schedule = LinearSchedule(cfg.epsilon_start, cfg.epsilon_end, cfg.epsilon_anneal_steps)
            buffer = EpisodeBuffer(cfg.buffer_capacity)
            eps = schedule(0)
            while steps < total_steps:
                eps = schedule(steps)
                episode, info = rollout_episode(env, learner, eps, explore_rng)
                buffer.add(episode)
                steps += episode.length
                episodes += 1
                train_returns.append(info["return"])
                progress.update(env_steps=steps, episodes=episodes)
                if len(buffer) >= cfg.min_buffer:
                    do_update(buffer.sample(cfg.batch_size, sample_rng))
                if episodes % cfg.target_update_interval == 0:
                    learner.target_sync()
                if steps >= next_log:
                    log(steps, episodes, eps, n_logs)
                    n_logs += 1
                    next_log = (steps // log_interval + 1) * log_interval
            explore_value = eps
        else:
            spec = learner.spec
            noise = GaussianNoise(cfg.sigma_start, cfg.sigma_end,
                                  int(cfg.sigma_anneal_fraction * total_steps))
            buffer = TransitionBuffer(min(cfg.buffer_capacity, max(total_steps, 1)),
                                      spec.n_agents, spec.obs_dim, spec.act_dim)
            state, obs = env.reset(explore_rng)
            ep_return = 0.0
            sigma = noise.sigma(0)
            while steps < total_steps:
                sigma = noise.sigma(steps)
                u, _ = learner.act(obs, state.alive, sigma, explore_rng)
                nxt, r, nobs, done = env.step(state, u)
                terminal = done and nxt.t < env.episode_limit
                buffer.add(obs, u, r, nobs, terminal, state.alive, nxt.alive)
                steps += 1
                ep_return += r
                state, obs = nxt, nobs
                if done:
                    episodes += 1
                    train_returns.append(ep_return)
                    ep_return = 0.0
                    state, obs = env.reset(explore_rng)
                progress.update(env_steps=steps, episodes=episodes)
                if steps % cfg.update_every == 0 and len(buffer) >= cfg.min_buffer:
                    do_update(buffer.sample(cfg.batch_size, sample_rng))
                if steps >= next_log:
                    log(steps, episodes, sigma, n_logs)
                    n_logs += 1
                    next_log = (steps // log_interval + 1) * log_interval
            explore_value = sigma
        final, rows = log(steps, episodes, explore_value, n_logs, final=True)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if run_dir is not None:
        with open(run_dir / "consensus_trace.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "timestep", "agent", "consensus", "alive", "value"])
            w.writerows(rows)
        if save_checkpoint:
            checkpoint.save(run_dir / "checkpoint.cola", learner.state_dict())
        if record_trajectory:
            write_trajectory(run_dir / "trajectory.jsonl", env, learner, family,
                             np.random.default_rng([int(eval_entropy), 10 ** 6]))
    return RunResult(metrics=metrics, final=final, learner=learner, audit=auditor, trace=rows,
                     run_dir=run_dir)
