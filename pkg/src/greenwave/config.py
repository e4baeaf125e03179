"""Flat key=value configuration files with a complete defaults registry."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .trainer import HyperParams


class ConfigError(Exception):
    pass


# Every training hyperparameter and experiment knob, overridable from file or CLI.
DEFAULTS: dict[str, str] = {
    # training
    "lr": "0.001",
    "batch_size": "16",
    "gamma": "0.997",
    "K": "3",
    "Kp": "3",
    "delta": "1",
    "beta": "50",
    "c1": "5.0",
    "c2": "0.5",
    "c3": "0.5",
    "c_base": "19652",
    "c_init": "1.25",
    "patience": "10000",
    "unroll": "1",
    "n_step": "5",
    "replay_capacity": "500",
    "reanalyze_period": "500",
    "reanalyze_fraction": "0.05",
    "actor_ratio": "0.1",
    "d": "32",
    "hidden": "32",
    "dirichlet_alpha": "0.3",
    "noise_fraction": "0.25",
    "episode_steps": "600",
    "validation_period": "1000",
    "validation_beta": "0",
    "checkpoint_period": "1000",
    "max_train_steps": "20000",
    # experiment layout
    "seeds": "5",
    "train_nets": "10",
    "val_nets": "10",
    "test_nets": "10",
    "min_intersections": "2",
    "max_intersections": "3",
    "eval_minutes": "10",
    "eval_max_steps": "7200",
    "reference": "mujam-a",
    "smoke_grid": "10",
    "smoke_warm_minutes": "30",
    "smoke_eval_minutes": "60",
}

_INT_KEYS = {
    "batch_size",
    "K",
    "Kp",
    "delta",
    "beta",
    "patience",
    "unroll",
    "n_step",
    "replay_capacity",
    "reanalyze_period",
    "d",
    "hidden",
    "episode_steps",
    "validation_period",
    "validation_beta",
    "checkpoint_period",
    "max_train_steps",
    "seeds",
    "train_nets",
    "val_nets",
    "test_nets",
    "min_intersections",
    "max_intersections",
    "eval_minutes",
    "eval_max_steps",
    "smoke_grid",
    "smoke_warm_minutes",
    "smoke_eval_minutes",
}

_FLOAT_KEYS = {
    "lr",
    "gamma",
    "c1",
    "c2",
    "c3",
    "c_base",
    "c_init",
    "reanalyze_fraction",
    "actor_ratio",
    "dirichlet_alpha",
    "noise_fraction",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        val = val.strip()
        if not key or not val:
            raise ConfigError(f"line {ln}: empty key or value")
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = val
    return out


@dataclass
class Config:
    values: dict[str, str]

    def getint(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as e:
            raise ConfigError(f"{key}: expected integer, got {self.values[key]!r}") from e

    def getfloat(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as e:
            raise ConfigError(f"{key}: expected number, got {self.values[key]!r}") from e

    def getstr(self, key: str) -> str:
        return self.values[key]

    def hyperparams(self) -> HyperParams:
        kwargs = {}
        for f in fields(HyperParams):
            if f.name not in self.values:
                continue
            if f.name in _INT_KEYS:
                kwargs[f.name] = self.getint(f.name)
            elif f.name in _FLOAT_KEYS:
                kwargs[f.name] = self.getfloat(f.name)
        return HyperParams(**kwargs)


def load_config(path=None, overrides: dict[str, str] | None = None) -> Config:
    """Defaults, then the file, then explicit overrides; unknown keys rejected."""
    values = dict(DEFAULTS)
    layers = []
    if path is not None:
        try:
            with open(path) as f:
                layers.append(parse_config_text(f.read()))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    if overrides:
        layers.append(dict(overrides))
    for layer in layers:
        for key, val in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key: {key!r}")
            values[key] = str(val)
    cfg = Config(values)
    # fail fast on malformed numerics regardless of which keys get used later
    for key in _INT_KEYS:
        cfg.getint(key)
    for key in _FLOAT_KEYS:
        cfg.getfloat(key)
    if cfg.getint("min_intersections") > cfg.getint("max_intersections"):
        raise ConfigError("min_intersections exceeds max_intersections")
    return cfg
