"""Run configuration: one JSON document, fully defaulted, strictly checked.

Sections map onto the dataclasses used by each command. Unknown keys and
ill-typed values raise :class:`ConfigError` naming the offending field.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig
from .tables import SceneConfig, TheoryGrid
from .training import FrlConfig, ModelSpec, TrainConfig
from .verify import VerifyConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DistributionConfig:
    """Synthetic multi-class task: orthogonal centres, isotropic classes."""

    sigmas: tuple = (1.0, 1.0, 2.0, 2.0)
    distance: float = 4.0
    train_per_class: int = 2500
    val_per_class: int = 300
    test_per_class: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        for name in ("train_per_class", "val_per_class", "test_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class DatasetCsvConfig:
    """Labelled CSV files; when set they replace the synthetic distribution."""

    train: str | None = None
    val: str | None = None
    test: str | None = None

    def __post_init__(self):
        given = [p is not None for p in (self.train, self.val, self.test)]
        if any(given) and not all(given):
            raise ValueError("train, val and test paths go together")

    @property
    def enabled(self) -> bool:
        return self.train is not None


@dataclass(frozen=True)
class RunConfig:
    """Extra knobs for ``train``/``ablate`` beyond the optimiser.

    ``finetune_lr`` is the rate for every phase that starts from a pre-trained
    model (FRL iterations, ablation retraining); ``None`` keeps ``train.lr``.
    """

    pretrain_epochs: int = 15
    frl_epochs_per_iteration: int = 1
    finetune_lr: float | None = 1e-3

    def __post_init__(self):
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be non-negative")
        if self.finetune_lr is not None and not self.finetune_lr > 0:
            raise ValueError("finetune_lr must be positive")
        if self.frl_epochs_per_iteration != 1:
            raise ValueError("one epoch per outer iteration is the only supported schedule")


@dataclass(frozen=True)
class AblationConfig:
    target_class: int = 2
    weight_ratios: tuple = (1.0, 2.0, 3.0, 4.5)
    margin_ratios: tuple = (1.0, 1.5, 2.0, 2.5)
    epochs: int = 10

    def __post_init__(self):
        for name in ("weight_ratios", "margin_ratios"):
            vals = tuple(float(r) for r in getattr(self, name))
            if not vals or min(vals) < 1:
                raise ValueError(f"{name} must be non-empty with every ratio >= 1")
            object.__setattr__(self, name, vals)
        if self.epochs < 1:
            raise ValueError("epochs must be positive")


SECTIONS = {
    "distribution": DistributionConfig,
    "dataset_csv": DatasetCsvConfig,
    "model": ModelSpec,
    "train": TrainConfig,
    "run": RunConfig,
    "frl": FrlConfig,
    "attack": AttackConfig,
    "train_attack": AttackConfig,
    "analytic": TheoryGrid,
    "verify": VerifyConfig,
    "scene": SceneConfig,
    "ablation": AblationConfig,
}

DEFAULT_SECTIONS = {
    "train": dict(method="frl", epochs=15, lr=0.1, momentum=0.9, batch_size=256),
    "attack": dict(norm="linf", epsilon=0.4, steps=20),
    "train_attack": dict(norm="linf", epsilon=0.4, steps=5),
}


@dataclass(frozen=True)
class Config:
    seed: int = 0
    distribution: DistributionConfig = field(default_factory=DistributionConfig)
    dataset_csv: DatasetCsvConfig = field(default_factory=DatasetCsvConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**DEFAULT_SECTIONS["train"]))
    run: RunConfig = field(default_factory=RunConfig)
    frl: FrlConfig = field(default_factory=FrlConfig)
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(**DEFAULT_SECTIONS["attack"]))
    train_attack: AttackConfig = field(default_factory=lambda: AttackConfig(**DEFAULT_SECTIONS["train_attack"]))
    analytic: TheoryGrid = field(default_factory=TheoryGrid)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _check_type(path: str, default, value, nullable: bool = False):
    if value is None:
        if default is None or nullable:
            return None
        raise ConfigError(f"{path}: null is not allowed")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        inner = default[0] if default else 0.0
        return tuple(_check_type(f"{path}[{i}]", inner, x) for i, x in enumerate(value))
    if default is None and isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number or string, got {value!r}")
    return value


def _defaults(cls, base: dict) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in base:
            out[f.name] = base[f.name]
        elif f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        else:
            out[f.name] = f.default_factory()
    return out


def _build_section(name: str, doc) -> object:
    cls = SECTIONS[name]
    if not isinstance(doc, dict):
        raise ConfigError(f"{name}: expected an object")
    defaults = _defaults(cls, DEFAULT_SECTIONS.get(name, {}))
    unknown = sorted(set(doc) - set(defaults))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown field (allowed: {', '.join(sorted(defaults))})")
    values = dict(defaults)
    nullable = {f.name for f in dataclasses.fields(cls) if f.default is None}
    for key, val in doc.items():
        values[key] = _check_type(f"{name}.{key}", defaults[key], val, key in nullable)
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(doc: dict) -> Config:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section (allowed: seed, {', '.join(SECTIONS)})")
    kwargs = {}
    if "seed" in doc:
        kwargs["seed"] = _check_type("seed", 0, doc["seed"])
    for name in SECTIONS:
        if name in doc:
            kwargs[name] = _build_section(name, doc[name])
    return Config(**kwargs)


def load_config(path) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc)


def override(cfg: Config, section: str, **changes) -> Config:
    """Apply command-line overrides through the same checks as the file."""
    current = _plain(dataclasses.asdict(getattr(cfg, section)))
    current.update(changes)
    return dataclasses.replace(cfg, **{section: _build_section(section, current)})
