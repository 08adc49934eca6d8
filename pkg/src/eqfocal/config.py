"""Experiment configuration files (TOML).

Every section maps onto one dataclass; unknown keys are rejected so a typo
never silently falls back to a default. ``effective()`` returns the fully
resolved configuration that gets echoed into the run manifest.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import EqFocalError, ParseError
from .losses import LossHyperParams, Variant
from .synth import DatasetSpec
from .trainer import TrainConfig


class ConfigError(ParseError):
    pass


@dataclass(frozen=True)
class CurvesConfig:
    gamma_v: tuple = (0.0, 2.0, 4.0, 6.0, 8.0)
    x_t_min: float = -6.0
    x_t_max: float = 6.0
    x_t_steps: int = 121

    def grid(self):
        return np.linspace(self.x_t_min, self.x_t_max, self.x_t_steps)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str = "runs/default"
    variants: tuple = (Variant.FL, Variant.EFL)
    seeds: tuple = (0,)
    s_values: tuple = (8.0,)
    eval_cap: int = 30
    workers: int = 1
    curves: CurvesConfig = field(default_factory=CurvesConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment.seeds must not be empty")
        if not self.variants:
            raise ConfigError("experiment.variants must not be empty")
        if any(s < 0 for s in self.s_values):
            raise ConfigError("experiment.s_values must be >= 0")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")

    @property
    def loss(self):
        return self.train.loss

    def with_seed(self, seed):
        return replace(self, dataset=self.dataset.replace(seed=seed),
                       train=replace(self.train, seed=seed), seeds=(seed,))

    def with_variant(self, variants):
        variants = tuple(Variant.parse(v) for v in variants)
        loss = self.train.loss.replace(variant=variants[0])
        return replace(self, train=replace(self.train, loss=loss), variants=variants)

    def effective(self):
        d = {
            "dataset": self.dataset.to_dict(),
            "loss": {k: (v.value if isinstance(v, Variant) else v) for k, v in asdict(self.train.loss).items()},
            "train": {k: v for k, v in asdict(self.train).items() if k != "loss"},
            "experiment": {"out": self.out, "variants": [v.value for v in self.variants],
                           "seeds": list(self.seeds), "s_values": list(self.s_values),
                           "eval_cap": self.eval_cap, "workers": self.workers},
            "curves": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.curves).items()},
        }
        return d

    def digest(self):
        # workers and out do not change results
        d = self.effective()
        d["experiment"] = {k: v for k, v in d["experiment"].items() if k not in ("workers", "out")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_OPTIONAL = {"grad_clip_norm", "max_iters", "ema_decay"}


def _coerce(section, name, value, default):
    path = f"{section}.{name}"
    if name in _OPTIONAL and (value is False or value == "none"):
        return None
    if isinstance(default, bool) or isinstance(value, bool):
        if not isinstance(value, bool) or not isinstance(default, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, float) or (default is None and isinstance(value, float)):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int) or default is None:
        if isinstance(value, float) and value.is_integer() and default is not None:
            value = int(value)
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _section(raw, name, cls, skip=()):
    values = raw.get(name, {})
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    defaults = cls()
    out = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown field (known: {', '.join(sorted(known))})")
        out[key] = _coerce(name, key, value, getattr(defaults, key))
    return out


def parse_config(text):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        raise ConfigError(f"invalid TOML: {getattr(exc, 'msg', exc)}", line=line, column=col) from None
    unknown = set(raw) - {"dataset", "loss", "train", "experiment", "curves"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    try:
        dataset = DatasetSpec(**_section(raw, "dataset", DatasetSpec))
        loss = LossHyperParams(**_section(raw, "loss", LossHyperParams))
        train = TrainConfig(loss=loss, **_section(raw, "train", TrainConfig, skip=("loss",)))
        exp = _section(raw, "experiment", ExperimentConfig, skip=("dataset", "train", "curves"))
        if "variants" in exp:
            exp["variants"] = tuple(Variant.parse(v) for v in exp["variants"])
        if "s_values" in exp:
            exp["s_values"] = tuple(float(s) for s in exp["s_values"])
        curves = CurvesConfig(**_section(raw, "curves", CurvesConfig))
        return ExperimentConfig(dataset=dataset, train=train, curves=curves, **exp)
    except ConfigError:
        raise
    except (EqFocalError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_config(data.decode("utf-8"))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
