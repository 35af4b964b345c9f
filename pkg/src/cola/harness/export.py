"""Plot-data export: learning curves across seeds and parameter counts."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from ..algos.config import ACTOR_CRITIC_ALGOS, VALUE_ALGOS
from ..algos.train import make_learner
from ..nets import rl_parameter_count
from .config import RunConfig, load_config


def find_runs(root: str | Path) -> list[Path]:
    root = Path(root)
    return sorted(p.parent for p in root.rglob("metrics.jsonl"))


def read_metrics(run_dir: Path) -> list[dict]:
    with open(run_dir / "metrics.jsonl", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ci95(values) -> float | None:
    """Half-width of the t-based 95% interval of the mean; None for one value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return None
    sem = values.std(ddof=1) / np.sqrt(values.size)
    return float(stats.t.ppf(0.975, values.size - 1) * sem)


def learning_curves(runs: list[Path]) -> list[dict]:
    """One row per (algorithm, logging interval) with mean and ci95 across seeds."""
    groups: dict[tuple[str, str], list[list[dict]]] = defaultdict(list)
    for run in runs:
        cfg = load_config(run / "config.ini", environ={})
        records = [r for r in read_metrics(run) if not r.get("final")]
        groups[(cfg.scenario, cfg.train.algorithm)].append(records)
    rows = []
    for (scenario, algorithm), seed_records in sorted(groups.items()):
        n_intervals = min(len(r) for r in seed_records)
        for i in range(n_intervals):
            returns = [r[i]["mean_eval_return"] for r in seed_records]
            half = ci95(returns)
            rows.append({"scenario": scenario, "algorithm": algorithm,
                         "env_steps": int(min(r[i]["env_steps"] for r in seed_records)),
                         "mean": float(np.mean(returns)), "ci95": "" if half is None else half,
                         "n_seeds": len(returns)})
    return rows


def parameter_counts(cfg: RunConfig) -> list[dict]:
    """RL-gradient-bearing parameters per algorithm variant of the run's family.

    Consensus-builder parameters never receive an RL gradient and are excluded;
    their total is listed separately for reference.
    """
    env = cfg.make_env()
    algos = VALUE_ALGOS if cfg.train.family == "value" else ACTOR_CRITIC_ALGOS
    rows = []
    for algorithm in algos:
        learner = make_learner(env, replace(cfg.train, algorithm=algorithm).resolved(),
                               np.random.default_rng(0))
        rl = sum(rl_parameter_count(m) for m in learner.rl_modules().values())
        builder = 0 if learner.builder is None else sum(
            p.data.size for p in learner.builder.student.parameters())
        rows.append({"scenario": cfg.scenario, "algorithm": algorithm, "rl_parameters": int(rl),
                     "builder_parameters_excluded": int(builder)})
    return rows


def export_plot_data(root: str | Path, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Write ``learning_curve.csv`` and ``param_counts.csv`` for every run under ``root``."""
    root = Path(root)
    out = Path(out_dir) if out_dir is not None else root
    out.mkdir(parents=True, exist_ok=True)
    runs = find_runs(root)
    if not runs:
        raise FileNotFoundError(f"no metrics.jsonl under {root}")
    curves = learning_curves(runs)
    paths = {"learning_curve": out / "learning_curve.csv", "param_counts": out / "param_counts.csv"}
    with open(paths["learning_curve"], "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["scenario", "algorithm", "env_steps", "mean", "ci95", "n_seeds"])
        w.writeheader()
        w.writerows(curves)
    seen, counts = set(), []
    for run in runs:
        cfg = load_config(run / "config.ini", environ={})
        key = (cfg.scenario, cfg.train.family)
        if key not in seen:
            seen.add(key)
            counts.extend(parameter_counts(cfg))
    with open(paths["param_counts"], "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["scenario", "algorithm", "rl_parameters",
                                           "builder_parameters_excluded"])
        w.writeheader()
        w.writerows(counts)
    return paths
