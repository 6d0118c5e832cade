"""Experiment configuration and its flat key-value file format.

The file is INI-style: one ``[section]`` per config type, ``key = value``
lines, ``#`` comments. Lists are comma-separated. Unknown sections and
unknown keys are errors.

    [task]
    kind = Needle
    vocab_size = 16
    seq_len = 4
    num_prompts = 8
    seed = 7

    [train]
    G = 5
    beta = 0.01
    variant = SGRPO_CGI

    [scorer]
    kind = ExactMatch

    [binarizer]
    delta = 0.9

    [experiment]
    steps = 2000
    seeds = 0, 1, 2, 3, 4
    variants = GRPO, SGRPO_CGI
    output_dir = runs/cold_start

    [retention]          # optional
    num_prompts = 4
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .engine import TrainConfig, Variant
from .errors import ConfigurationError
from .tasks import TaskSpec
from .verifier import BinarizerSpec, ScorerSpec


@dataclass(frozen=True)
class RetentionSettings:
    num_prompts: int = 4
    seed: int = 1000
    pretrain_threshold: float = 0.95
    pretrain_max_steps: int = 2000
    pretrain_check_every: int = 25
    eval_every: int = 100
    samples_per_prompt: int = 50

    def __post_init__(self):
        if self.num_prompts < 1 or self.samples_per_prompt < 1 or self.eval_every < 1:
            raise ConfigurationError("retention counts must be positive")
        if not 0.0 <= self.pretrain_threshold <= 1.0:
            raise ConfigurationError("pretrain_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    scorer: ScorerSpec = field(default_factory=ScorerSpec)
    binarizer: BinarizerSpec = field(default_factory=BinarizerSpec)
    steps: int = 2000
    seeds: tuple = (0,)
    variants: tuple = ()
    retention: Optional[RetentionSettings] = None
    output_dir: str = "runs/default"
    checkpoint_format: str = "binary"
    step_retry_budget: int = 3
    injection_window: int = 50
    final_window: int = 100
    log_wall_time: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        variants = tuple(Variant(v) for v in (self.variants or (self.train.variant,)))
        object.__setattr__(self, "variants", variants)
        if self.checkpoint_format not in ("binary", "json"):
            raise ConfigurationError(f"checkpoint_format must be binary or json, got {self.checkpoint_format!r}")
        if self.step_retry_budget < 0 or self.injection_window < 1 or self.final_window < 1:
            raise ConfigurationError("retry budget and windows must be positive")
        if self.train.delta != self.binarizer.delta:
            raise ConfigurationError(
                f"train.delta={self.train.delta} disagrees with binarizer.delta={self.binarizer.delta}"
            )

    def to_dict(self) -> dict:
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, (list, tuple)):
                return [plain(x) for x in obj]
            if isinstance(obj, enum.Enum):
                return obj.value
            return obj
        return plain(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def _coerce(cls, section: str, items: dict, list_fields: dict = None) -> dict:
    list_fields = list_fields or {}
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    out = {}
    for key, text in items.items():
        if key not in fields and key not in list_fields:
            raise ConfigurationError(f"unknown key {key!r} in [{section}]")
        try:
            if key in list_fields:
                out[key] = [list_fields[key](x) for x in _parse_list(text)]
                continue
            default = fields[key].default
            if isinstance(default, bool):
                out[key] = _parse_bool(text)
            elif isinstance(default, int) and not hasattr(default, "value"):
                out[key] = int(text)
            elif isinstance(default, float):
                out[key] = float(text)
            elif key == "endpoint":
                out[key] = text.strip() or None
            else:
                out[key] = text.strip()
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key!r} in [{section}]: {exc}") from None
    return out


_SECTIONS = ("task", "train", "scorer", "binarizer", "experiment", "retention")


def _read_parser(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (G)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigurationError(f"unknown section [{name}]")
    return parser


def _build(cls, section, items, **extra):
    try:
        return cls(**_coerce(cls, section, items, extra.pop("list_fields", None)), **extra)
    except TypeError as exc:
        raise ConfigurationError(f"[{section}]: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"[{section}]: {exc}") from None


def load_task_spec(path) -> TaskSpec:
    parser = _read_parser(path)
    if not parser.has_section("task"):
        raise ConfigurationError("missing [task] section")
    return _build(TaskSpec, "task", dict(parser["task"]))


def load_config(path) -> ExperimentConfig:
    parser = _read_parser(path)
    sec = {name: dict(parser[name]) if parser.has_section(name) else {} for name in _SECTIONS}
    task = _build(TaskSpec, "task", sec["task"])
    binarizer = _build(BinarizerSpec, "binarizer", sec["binarizer"])
    train_items = dict(sec["train"])
    train_items.setdefault("delta", str(binarizer.delta))
    train = _build(TrainConfig, "train", train_items)
    scorer = _build(ScorerSpec, "scorer", sec["scorer"])
    retention = _build(RetentionSettings, "retention", sec["retention"]) if parser.has_section("retention") else None
    exp = _coerce(ExperimentConfig, "experiment", sec["experiment"], {"seeds": int, "variants": str})
    for reserved in ("task", "train", "scorer", "binarizer", "retention"):
        if reserved in exp:
            raise ConfigurationError(f"unknown key {reserved!r} in [experiment]")
    try:
        return ExperimentConfig(task=task, train=train, scorer=scorer, binarizer=binarizer,
                                retention=retention, **exp)
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None
