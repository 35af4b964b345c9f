"""Run configuration: sectioned key-value text (INI), env-var overrides.

Layout::

    [run]      scenario, seed, total_steps, output_dir, logging/eval cadence
    [train]    every TrainConfig field
    [env]      scenario constructor arguments (checked against its signature)

Any key not listed above is an error naming the key.  ``COLA_<KEY>`` in the
environment overrides ``[run]``/``[train]`` keys and ``COLA_ENV_<KEY>`` the
``[env]`` section.
"""

from __future__ import annotations

import configparser
import inspect
import io
import os
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..algos.config import TrainConfig
from ..envs import SCENARIOS

ENV_PREFIX = "COLA_"


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "grid_predator_prey"
    seed: int = 0
    total_steps: int = 20_000
    output_dir: str = "runs/default"
    log_interval: int = 1000
    eval_episodes: int = 16
    final_eval_episodes: int = 64
    audit: bool = False
    record_trajectory: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    env: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {sorted(SCENARIOS)}, got {self.scenario!r}",
                              "scenario")
        for name in ("total_steps", "log_interval", "eval_episodes", "final_eval_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive", name)
        discrete = hasattr(SCENARIOS[self.scenario], "n_actions")
        if discrete != (self.train.family == "value"):
            kind = "discrete" if discrete else "continuous"
            raise ConfigError(f"algorithm {self.train.algorithm} cannot act in the {kind}-action "
                              f"scenario {self.scenario}", "algorithm")
        allowed = _env_params(self.scenario)
        for key in self.env:
            if key not in allowed:
                raise ConfigError(f"unknown env key {key!r} for scenario {self.scenario}", key)

    def make_env(self):
        return SCENARIOS[self.scenario](**self.env)


RUN_KEYS = [f.name for f in fields(RunConfig) if f.name not in ("train", "env")]
TRAIN_KEYS = [f.name for f in fields(TrainConfig)]


def _env_params(scenario: str) -> dict[str, inspect.Parameter]:
    sig = inspect.signature(SCENARIOS[scenario].__init__)
    return {k: p for k, p in sig.parameters.items() if k != "self"}


def _hints(cls) -> dict[str, object]:
    return typing.get_type_hints(cls)


def _coerce(key: str, text: str, hint) -> object:
    text = text.strip()
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional:
        if text.lower() in ("none", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text.replace("_", ""))
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for key {key!r}", key) from None


def _coerce_env(key: str, text: str, param: inspect.Parameter) -> object:
    default = param.default
    hint = type(default) if default is not inspect.Parameter.empty and default is not None else str
    return _coerce(key, text, hint)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def build(run: dict[str, str], train: dict[str, str], env: dict[str, str]) -> RunConfig:
    run_hints, train_hints = _hints(RunConfig), _hints(TrainConfig)
    run_kw = {k: _coerce(k, v, run_hints[k]) for k, v in run.items()}
    train_kw = {k: _coerce(k, v, train_hints[k]) for k, v in train.items()}
    scenario = run_kw.get("scenario", RunConfig.scenario)
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {sorted(SCENARIOS)}, got {scenario!r}", "scenario")
    params = _env_params(scenario)
    env_kw = {}
    for k, v in env.items():
        if k not in params:
            raise ConfigError(f"unknown env key {k!r} for scenario {scenario}", k)
        env_kw[k] = _coerce_env(k, v, params[k])
    try:
        tc = TrainConfig(**train_kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**run_kw, train=tc, env=env_kw)


def parse_config(text: str, environ: dict[str, str] | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str               # keys are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {"run": {}, "train": {}, "env": {}}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]", name)
        sections[name] = dict(parser[name])
    for key in sections["run"]:
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [run]", key)
    for key in sections["train"]:
        if key not in TRAIN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [train]", key)
    if environ:
        apply_env_overrides(sections, environ)
    return build(sections["run"], sections["train"], sections["env"])


def apply_env_overrides(sections: dict[str, dict[str, str]], environ: dict[str, str]) -> None:
    """``COLA_SEED=3`` sets ``[run] seed``; ``COLA_ENV_SIZE=8`` sets ``[env] size``."""
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key.startswith("env_"):
            sections["env"][key[4:]] = value
        elif key in RUN_KEYS:
            sections["run"][key] = value
        elif key in TRAIN_KEYS:
            sections["train"][key] = value
        # other COLA_* variables (e.g. the kernel backend switch) are not config keys


def load_config(path: str | os.PathLike, environ: dict[str, str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, os.environ if environ is None else environ)


def serialize(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {k: _format(getattr(cfg, k)) for k in RUN_KEYS}
    parser["train"] = {k: _format(v) for k, v in asdict(cfg.train).items()}
    parser["env"] = {k: _format(v) for k, v in cfg.env.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def with_overrides(cfg: RunConfig, **values) -> RunConfig:
    """Replace any run/train/env key by name (used by sweeps)."""
    run_kw, train_kw, env_kw = {}, {}, dict(cfg.env)
    for k, v in values.items():
        if k in RUN_KEYS:
            run_kw[k] = v
        elif k in TRAIN_KEYS:
            train_kw[k] = v
        elif k in _env_params(cfg.scenario):
            env_kw[k] = v
        else:
            raise ConfigError(f"unknown key {k!r}", k)
    try:
        train = replace(cfg.train, **train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return replace(cfg, **run_kw, train=train, env=env_kw)


def coerce_value(cfg: RunConfig, key: str, text: str) -> object:
    """Parse a textual value for ``key`` with that key's type."""
    if key in RUN_KEYS:
        return _coerce(key, text, _hints(RunConfig)[key])
    if key in TRAIN_KEYS:
        return _coerce(key, text, _hints(TrainConfig)[key])
    params = _env_params(cfg.scenario)
    if key in params:
        return _coerce_env(key, text, params[key])
    raise ConfigError(f"unknown key {key!r}", key)


def documented_keys() -> str:
    """Every key with its default, as a config file (used for docs)."""
    return serialize(RunConfig())
