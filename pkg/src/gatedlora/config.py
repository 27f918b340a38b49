"""Run configuration: one JSON file describing data, model, and training.

The file groups fields into sections for readability:

    {
      "seed": 0,
      "out_dir": "runs/default",
      "data":  { ... synthetic dataset shape ... },
      "model": { ... backbone and router widths ... },
      "train": { ... budget, optimizer, routing mode ... },
      "granularity_table": null
    }

In memory the "model" and "train" sections both live on TrainConfig, which
already carries architecture knobs so that one object determines a model.
The top-level seed is the master seed; it overwrites any seed given inside
the sections, so a config file has exactly one source of randomness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .synthdata import SynthSpec
from .training import TrainConfig

__all__ = ["RunConfig", "load_config", "save_config", "apply_overrides"]

_DATA_FIELDS = (
    "n_tasks", "n_eras", "d_in", "n_train", "n_dev", "n_test", "conflict",
    "classes_per_task",
)
_MODEL_FIELDS = (
    "d_model", "depth", "d_t", "d_e", "d_h", "dropout_rate", "alpha",
    "per_layer_routers",
)
_TRAIN_FIELDS = (
    "epochs", "batch_size", "learning_rate", "optimizer", "beta1", "beta2",
    "eps", "rank", "n_experts", "mode", "granularity",
)
_TOP_KEYS = ("seed", "out_dir", "data", "model", "train", "granularity_table")


@dataclass
class RunConfig:
    data: SynthSpec = field(default_factory=SynthSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        # master seed wins over whatever the sections carried
        self.data = replace(self.data, seed=self.seed)
        self.train = replace(self.train, seed=self.seed)


def _check_section(raw: dict, name: str, allowed: tuple[str, ...]) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping, got {type(sec).__name__}")
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field(s) in section {name!r}: {', '.join(unknown)}")
    return sec


def _from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown top-level field(s): {', '.join(unknown)}")

    data_kwargs = dict(_check_section(raw, "data", _DATA_FIELDS))
    if "classes_per_task" in data_kwargs and data_kwargs["classes_per_task"] is not None:
        data_kwargs["classes_per_task"] = tuple(data_kwargs["classes_per_task"])

    train_kwargs = dict(_check_section(raw, "model", _MODEL_FIELDS))
    train_kwargs.update(_check_section(raw, "train", _TRAIN_FIELDS))

    table = raw.get("granularity_table")
    if table is not None:
        if not isinstance(table, dict):
            raise ConfigError("granularity_table must be a mapping of dataset id to routing id")
        try:
            train_kwargs["granularity_table"] = {int(k): int(v) for k, v in table.items()}
        except (TypeError, ValueError) as e:
            raise ConfigError(f"granularity_table has a non-integer entry: {e}") from None

    try:
        spec = SynthSpec(**data_kwargs)
    except TypeError as e:
        raise ConfigError(f"section 'data': {e}") from None
    try:
        train = TrainConfig(**train_kwargs)
    except TypeError as e:
        raise ConfigError(f"section 'model'/'train': {e}") from None

    return RunConfig(
        data=spec,
        train=train,
        seed=raw.get("seed", 0),
        out_dir=raw.get("out_dir", "runs/default"),
    )


def _to_dict(config: RunConfig) -> dict:
    train_values = {f.name: getattr(config.train, f.name) for f in fields(config.train)}
    train_values["mode"] = train_values["mode"].value
    data_sec = {name: getattr(config.data, name) for name in _DATA_FIELDS}
    data_sec["classes_per_task"] = list(data_sec["classes_per_task"])
    table = train_values["granularity_table"]
    return {
        "seed": config.seed,
        "out_dir": config.out_dir,
        "data": data_sec,
        "model": {name: train_values[name] for name in _MODEL_FIELDS},
        "train": {name: train_values[name] for name in _TRAIN_FIELDS},
        "granularity_table": None if table is None else {str(k): v for k, v in sorted(table.items())},
    }


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return _from_dict(raw)


def save_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_to_dict(config), f, indent=2)
        f.write("\n")


# flag name -> where the value lands
_OVERRIDE_TARGETS = {
    "seed": "top",
    "out_dir": "top",
    "conflict": "data",
    "n_experts": "train",
    "rank": "train",
    "mode": "train",
    "granularity": "train",
    "epochs": "train",
}


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Return a new config with command-line values replacing file values.

    Rebuilds through the dict form so every validator runs again; an
    override that breaks an invariant (say rank no longer divisible by
    n_experts) fails here, not at model build time.
    """
    unknown = sorted(set(overrides) - set(_OVERRIDE_TARGETS))
    if unknown:
        raise ConfigError(f"unknown override(s): {', '.join(unknown)}")
    raw = _to_dict(config)
    for name, value in overrides.items():
        if value is None:
            continue
        target = _OVERRIDE_TARGETS[name]
        if target == "top":
            raw[name] = value
        else:
            raw[target][name] = value
    return _from_dict(raw)
