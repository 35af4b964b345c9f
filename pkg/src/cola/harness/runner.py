"""Run one configured training job and make its directory self-describing."""

from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np

from .. import __version__
from ..algos.train import RunResult, train
from ..envs import kernels
from .config import RunConfig, serialize


def version_stamp(cfg: RunConfig) -> dict:
    return {"cola": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba_kernels": bool(kernels.USE_NUMBA), "seed": cfg.seed}


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> RunResult:
    """Train under ``out_dir`` (default ``cfg.output_dir``): config snapshot,
    version stamp, metrics, checkpoint and consensus trace."""
    run_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(serialize(cfg), encoding="utf-8")
    (run_dir / "version.json").write_text(json.dumps(version_stamp(cfg), indent=2, sort_keys=True),
                                          encoding="utf-8")
    return train(cfg.make_env(), cfg.train, cfg.total_steps, cfg.seed, log_interval=cfg.log_interval,
                 eval_episodes=cfg.eval_episodes, final_eval_episodes=cfg.final_eval_episodes,
                 out_dir=run_dir, audit=cfg.audit, record_trajectory=cfg.record_trajectory)
