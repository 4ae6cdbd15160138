"""Run configuration: one JSON document with ``data``, ``model`` and ``train`` sections.

Precedence, lowest to highest: dataclass defaults, ``--preset``, ``--config``
file, explicit command-line flags. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    title_len: int = 30
    body_len: int = 200
    pos_cap: int = 50
    neg_cap: int = 20
    threshold_seconds: float = 10.0
    neg_ratio: int = 4
    min_freq: int = 2
    sample_seed: int = 0


@dataclass
class ModelConfig:
    word_dim: int = 300
    heads: int = 8
    head_dim: int = 32
    attn_hidden: int = 200
    blocks: int = 1
    dropout: float = 0.2
    embed_std: float = 0.1
    word_init: str = "cooccurrence"  # "cooccurrence" | "random"
    # ablation switches
    views: str = "both"  # "title" | "body" | "both"
    word_attention: bool = True
    news_attention: bool = True
    interactive: bool = True
    negative_feedback: bool = True
    interactive_swapped: bool = False  # c_t also attends over body words, queried by the title summary
    share_view_params: bool = False

    @property
    def d_model(self) -> int:
        return self.heads * self.head_dim


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 30
    epochs: int = 3
    patience: int = 2
    clip_norm: float = 5.0
    seed: int = 0
    precision: str = "single"
    redraw_negatives: bool = False
    eval_batch: int = 256


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        m, d, t = self.model, self.data, self.train
        if m.views not in ("title", "body", "both"):
            raise ConfigError(f"model.views must be title, body or both, got {m.views!r}")
        if d.neg_ratio < 1:
            raise ConfigError("data.neg_ratio must be at least 1")
        if t.batch_size < 1:
            raise ConfigError("train.batch_size must be at least 1")
        if d.threshold_seconds < 0:
            raise ConfigError("data.threshold_seconds must be non-negative")
        if not 0 <= m.dropout < 1:
            raise ConfigError("model.dropout must be in [0, 1)")
        if m.word_init not in ("cooccurrence", "random"):
            raise ConfigError(f"model.word_init must be cooccurrence or random, got {m.word_init!r}")
        if t.precision not in ("single", "double"):
            raise ConfigError("train.precision must be single or double")
        for name in ("title_len", "body_len", "pos_cap", "neg_cap"):
            if getattr(d, name) < 1:
                raise ConfigError(f"data.{name} must be positive")
        for name in ("word_dim", "heads", "head_dim", "attn_hidden", "blocks"):
            if getattr(m, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return merge(cls(), raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
        return cls.from_dict(raw)


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig}


def _coerce(kind, value, where: str):
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if kind in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if kind in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if kind in (str, "str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    return value


def merge(base: RunConfig, raw: dict) -> RunConfig:
    """Overlay a (possibly partial) nested dict onto ``base``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = raw.keys() - _SECTIONS.keys()
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        current = getattr(base, name)
        updates = raw.get(name, {})
        if not isinstance(updates, dict):
            raise ConfigError(f"section {name} must be an object")
        known = {f.name: f.type for f in fields(cls)}
        bad = updates.keys() - known.keys()
        if bad:
            raise ConfigError(f"unknown key(s) in {name}: {sorted(bad)}")
        coerced = {k: _coerce(known[k], v, f"{name}.{k}") for k, v in updates.items()}
        sections[name] = replace(current, **coerced)
    return RunConfig(**sections).validate()


def paper_config() -> RunConfig:
    """Hyperparameters as reported for the full-size model."""
    return RunConfig()


def desk_config() -> RunConfig:
    """Small preset that trains the synthetic benchmark on one CPU core in minutes."""
    return merge(
        RunConfig(),
        {
            "data": {"body_len": 32},
            "model": {"word_dim": 16, "heads": 2, "head_dim": 8, "attn_hidden": 16},
            "train": {"lr": 1e-3, "epochs": 3, "batch_size": 30},
        },
    )


PRESETS = {"paper": paper_config, "desk": desk_config}
