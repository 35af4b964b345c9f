"""Cartesian sweeps of one config key over values and seeds."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, coerce_value, with_overrides
from .runner import run

SWEEP_COLUMNS = ["key", "value", "seed", "status", "final_eval_return", "final_capture_rate",
                 "env_steps", "run_dir", "error"]


def _child(args) -> dict:
    cfg, key, value, run_dir = args
    row = {"key": key, "value": value, "seed": cfg.seed, "run_dir": str(run_dir),
           "status": "ok", "final_eval_return": "", "final_capture_rate": "", "env_steps": "",
           "error": ""}
    try:
        result = run(cfg, run_dir)
        row.update(final_eval_return=result.final["mean_eval_return"],
                   final_capture_rate=result.final["capture_rate"],
                   env_steps=result.final["env_steps"])
    except Exception as exc:     # one failed child must not stop its siblings
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def plan(base: RunConfig, key: str, values: list[str], seeds: int, out_dir: Path):
    jobs = []
    for text in values:
        value = coerce_value(base, key, text)
        for i in range(seeds):
            # sweeping the seed itself offsets repeats from the swept value
            seed = (value if key == "seed" else base.seed) + i
            run_dir = out_dir / f"{key}={text}" / f"seed={seed}"
            cfg = with_overrides(base, **{**{key: value}, "seed": seed}, output_dir=str(run_dir))
            jobs.append((cfg, key, text, run_dir))
    return jobs


def sweep(base: RunConfig, key: str, values: list[str], seeds: int = 1,
          out_dir: str | Path | None = None, workers: int = 1) -> list[dict]:
    """Run ``values x seeds`` children; writes ``sweep.csv`` under ``out_dir``."""
    out = Path(out_dir if out_dir is not None else base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = plan(base, key, values, seeds, out)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_child, jobs))
    else:
        rows = [_child(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows
