"""Flat JSON run configuration with per-field validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .denoiser import DenoiserConfig
from .evalkit import MleConfig
from .sampling import InfillConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _pos_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v > 0


def _nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _pos_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def _nonneg_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0


def _unit(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0 <= v < 1


def _choice(*opts):
    return lambda v: v in opts


# key -> (default, check, description of the valid range)
SCHEMA = {
    "seed": (0, _nonneg_int, "a non-negative integer"),
    "T": (100, lambda v: _pos_int(v) and v >= 2, "an integer >= 2"),
    "discrete_s": (0.008, _pos_num, "a positive number"),
    # denoiser
    "n_layers": (4, _pos_int, "a positive integer"),
    "hidden": (64, _pos_int, "a positive integer"),
    "edge_hidden": (16, _pos_int, "a positive integer"),
    "global_hidden": (32, _pos_int, "a positive integer"),
    "heads": (4, _pos_int, "a positive integer"),
    "max_nodes": (60, _pos_int, "a positive integer"),
    "use_y_input": (True, lambda v: isinstance(v, bool), "true or false"),
    "y_param": ("eps", _choice("eps", "clean"), "'eps' or 'clean'"),
    # training
    "epochs": (10, _pos_int, "a positive integer"),
    "batch_size": (32, _pos_int, "a positive integer"),
    "lr": (2e-4, _nonneg_num, "a non-negative number"),
    "beta1": (0.9, _unit, "in [0, 1)"),
    "beta2": (0.999, _unit, "in [0, 1)"),
    "adam_eps": (1e-8, _pos_num, "a positive number"),
    "clip_norm": (5.0, _nonneg_num, "a non-negative number (0 disables)"),
    "lambda_E": (5.0, _nonneg_num, "a non-negative number"),
    "lambda_y": (1.0, _nonneg_num, "a non-negative number"),
    "val_fraction": (0.1, lambda v: _pos_num(v) and v <= 0.5, "in (0, 0.5]"),
    "val_samples": (64, _nonneg_int, "a non-negative integer"),
    "validate_every": (1, _pos_int, "a positive integer"),
    # infilling
    "M": (10, _pos_int, "a positive integer"),
    "N": (50, _pos_int, "a positive integer below T"),
    "y_init": ("mean-impute", _choice("mean-impute", "provided"), "'mean-impute' or 'provided'"),
    # MLE
    "mle_model": ("ridge", _choice("ridge", "stumps"), "'ridge' or 'stumps'"),
    "trials": (30, lambda v: _pos_int(v) and v >= 2, "an integer >= 2"),
    "ridge_lambda": (1.0, _nonneg_num, "a non-negative number"),
    "stump_rounds": (200, _pos_int, "a positive integer"),
    "stump_lr": (0.1, _nonneg_num, "a non-negative number"),
    "alpha": (0.05, lambda v: _pos_num(v) and v < 1, "in (0, 1)"),
    "test": ("welch", _choice("welch", "mannwhitney"), "'welch' or 'mannwhitney'"),
    "iqr_scope": ("trial", _choice("trial", "global"), "'trial' or 'global'"),
    "fingerprint_bits": (1024, lambda v: _pos_int(v) and v & (v - 1) == 0, "a power of two"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self):
        return dict(self.values)

    def denoiser(self, d: int) -> DenoiserConfig:
        names = {f.name for f in fields(DenoiserConfig)}
        kw = {k: v for k, v in self.values.items() if k in names}
        return DenoiserConfig(d=d, **kw)

    def train(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.values.items() if k in names})

    def infill(self) -> InfillConfig:
        return InfillConfig(M=self["M"], N=self["N"], y_init=self["y_init"])

    def mle(self) -> MleConfig:
        v = self.values
        return MleConfig(model=v["mle_model"], trials=v["trials"], ridge_lambda=v["ridge_lambda"],
                         rounds=v["stump_rounds"], lr=v["stump_lr"], alpha=v["alpha"],
                         test=v["test"], iqr_scope=v["iqr_scope"], seed=v["seed"])


def validate(raw: dict, source="config") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"{source}: unknown field(s): {', '.join(unknown)}")
    values = {k: v[0] for k, v in SCHEMA.items()}
    for key, val in raw.items():
        _, check, desc = SCHEMA[key]
        if isinstance(SCHEMA[key][0], float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not check(val):
            raise ConfigError(f"{source}: field {key} must be {desc}, got {val!r}")
        values[key] = val
    if not values["N"] < values["T"]:
        raise ConfigError(f"{source}: field N must be below T (N={values['N']}, T={values['T']})")
    return RunConfig(values)


def load_config(path=None) -> RunConfig:
    """Read and validate a JSON config; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate(raw, str(path))
