"""``cola`` command line: train, sweep, gradcheck, synthetic-consensus, export.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import typing
from dataclasses import fields
from pathlib import Path

from . import gradcheck_suite
from .config import ConfigError, load_config, with_overrides
from .export import export_plot_data
from .synthetic import SyntheticMultiViewSpec, synthetic_report


def _load_synthetic_spec(path: str | None, overrides: list[str]) -> SyntheticMultiViewSpec:
    items: dict[str, str] = {}
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(Path(path).read_text(encoding="utf-8"))
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read synthetic spec {path}: {exc}") from None
        for section in parser.sections():
            if section != "synthetic":
                raise ConfigError(f"unknown section [{section}]", section)
            items.update(parser[section])
    for text in overrides:
        key, sep, value = text.partition("=")
        if not sep:
            raise ConfigError(f"override must be key=value, got {text!r}")
        items[key.strip()] = value
    hints = typing.get_type_hints(SyntheticMultiViewSpec)
    names = {f.name for f in fields(SyntheticMultiViewSpec)}
    kwargs = {}
    for key, value in items.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in synthetic spec", key)
        hint = hints[key]
        try:
            if hint is bool:
                kwargs[key] = value.strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = hint(value.strip())
        except ValueError:
            raise ConfigError(f"bad value {value!r} for key {key!r}", key) from None
    try:
        return SyntheticMultiViewSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    from .runner import run

    cfg = load_config(args.config)
    result = run(cfg, args.out)
    print(json.dumps(result.final, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    from .sweep import sweep

    cfg = load_config(args.config)
    if args.out:
        cfg = with_overrides(cfg, output_dir=args.out)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty", "values")
    rows = sweep(cfg, args.key, values, seeds=args.seeds, workers=args.workers)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} runs, {failed} failed; combined CSV at {Path(cfg.output_dir) / 'sweep.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck_suite.run_suite(seed=args.seed)
    for r in report:
        status = "ok  " if r["passed"] else "FAIL"
        print(f"{status} {r['item']:<28} max_rel_error={r['max_rel_error']:.3e} "
              f"params={r['n_params']}")
    passed = all(r["passed"] for r in report)
    print(f"{len(report)} items checked, {'all passed' if passed else 'FAILURES present'}")
    return 0 if passed else 1


def cmd_synthetic(args) -> int:
    spec = _load_synthetic_spec(args.spec, args.set or [])
    report = synthetic_report(spec, seeds=args.seeds)
    for arm, res in report["arms"].items():
        print(f"{arm}: agreement={res['median_agreement']:.4f} "
              f"classes_used={res['median_classes_used']:.0f} "
              f"marginal_entropy={res['median_marginal_entropy']:.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    return 0


def cmd_export(args) -> int:
    paths = export_plot_data(args.run_dir, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cola", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configured run")
    t.add_argument("config")
    t.add_argument("--out", help="run directory (default: [run] output_dir)")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sweep", help="sweep one key over values and seeds")
    s.add_argument("config")
    s.add_argument("--key", required=True)
    s.add_argument("--values", required=True, help="comma separated")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--workers", type=int, default=1, help="parallel child processes")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference check of every net and loss")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    c = sub.add_parser("synthetic-consensus", help="train the builder on the multi-view task")
    c.add_argument("spec", nargs="?", help="INI file with a [synthetic] section")
    c.add_argument("--set", action="append", metavar="KEY=VALUE")
    c.add_argument("--seeds", type=int, default=1)
    c.add_argument("--json", help="write the full report here")
    c.set_defaults(fn=cmd_synthetic)

    e = sub.add_parser("export", help="learning-curve and parameter-count CSVs")
    e.add_argument("run_dir")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_export)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
