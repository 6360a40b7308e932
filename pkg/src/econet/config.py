"""Run configuration: a YAML file with model, pretrain, finetune and paths sections.

Unknown keys are rejected so typos fail loudly. Two profiles ship with the
package: ``default`` (reference hyperparameters on a desk-sized model) and
``desk`` (a larger learning rate so short runs on small corpora move).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .model import ModelConfig, ModelError
from .objectives import ObjectiveError, PretrainConfig
from .tasks import LABEL_SETS, FinetuneConfig, TaskError

PROFILES = ("default", "desk")


class ConfigError(ValueError):
    pass


@dataclass
class FinetuneSection:
    task: str = "ere"
    lr: float = 1e-5
    batch_size: int = 4
    epochs: int = 10
    seeds: tuple[int, ...] = (5, 7, 23)
    train_fraction: float = 1.0
    labels: str = "matres"
    patience: int = 0
    dropout: bool = True
    lr_grid: tuple[float, ...] = (5e-6, 1e-5)
    batch_grid: tuple[int, ...] = (2, 4, 6, 12)

    def to_finetune_config(self, lr: float | None = None,
                           batch_size: int | None = None) -> FinetuneConfig:
        labels = LABEL_SETS[self.labels] if self.task == "ere" else ("0", "1")
        return FinetuneConfig(task=self.task, lr=self.lr if lr is None else lr,
                              batch_size=self.batch_size if batch_size is None else batch_size,
                              epochs=self.epochs, seeds=tuple(self.seeds),
                              train_fraction=self.train_fraction, labels=labels,
                              dropout=self.dropout, patience=self.patience)


@dataclass
class PathsSection:
    lexicon: str | None = None
    event_lexicon: str | None = None
    exclusion: str | None = None


@dataclass
class ModelSection:
    n_layers: int = 4
    n_heads: int = 4
    hidden_dim: int = 128
    ffn_dim: int = 512
    max_seq_len: int = 128
    dropout_rate: float = 0.1
    init_std: float = 0.02

    def to_model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **dataclasses.asdict(self))


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ft = self.finetune
        if not ft.seeds:
            raise ConfigError("finetune.seeds must not be empty")
        if ft.labels not in LABEL_SETS:
            raise ConfigError(f"finetune.labels must be one of {sorted(LABEL_SETS)}")
        if not ft.lr_grid or not ft.batch_grid:
            raise ConfigError("finetune grids must not be empty")
        try:
            ft.to_finetune_config()
            self.model.to_model_config(vocab_size=8)
        except (TaskError, ModelError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        def plain(x):
            d = dataclasses.asdict(x)
            return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return {"model": plain(self.model), "pretrain": plain(self.pretrain),
                "finetune": plain(self.finetune), "paths": plain(self.paths)}

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False),
                              encoding="utf-8")


_SECTIONS = {"model": ModelSection, "pretrain": PretrainConfig,
             "finetune": FinetuneSection, "paths": PathsSection}


def _section(cls, data: Any, name: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    values = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        values[k] = v
    try:
        return cls(**values)
    except (TypeError, ObjectiveError, TaskError, ModelError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def from_dict(data: dict | None) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    return RunConfig(**{name: _section(cls, data.get(name), name)
                        for name, cls in _SECTIONS.items()})


def load_profile(name: str = "default") -> RunConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {PROFILES}")
    text = resources.files("econet").joinpath("configs").joinpath(f"{name}.yaml").read_text(
        encoding="utf-8")
    return from_dict(yaml.safe_load(text))


def load_config(path: str | Path | None = None, profile: str = "default") -> RunConfig:
    """A profile, optionally overridden section-by-section by a YAML file."""
    base = load_profile(profile).to_dict()
    if path is None:
        return from_dict(base)
    try:
        override = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(override, dict):
        raise ConfigError("config must be a mapping")
    merged = {k: dict(v) for k, v in base.items()}
    for sec, values in override.items():
        if sec not in merged:
            raise ConfigError(f"unknown section(s): {sec}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section {sec!r} must be a mapping")
        merged[sec].update(values)
    return from_dict(merged)
