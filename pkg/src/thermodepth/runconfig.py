"""Resolved run configuration: one JSON document covering every knob.

The file mirrors the config dataclasses section by section, using their
exact field names. Parsing rejects unknown keys at any level so typos
fail loudly instead of silently running defaults, and parse(emit(c))
gives back an equal config, which makes the echoed copy in each run
directory a faithful reproduction recipe.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

from .depthnet import BackboneConfig
from .losses import LossWeights
from .metrics import EvalConfig
from .sensorsim import SensorModel
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class GenConfig:
    """Synthetic dataset sizing for cmd_gen."""

    n_sequences: int = 16
    n_frames: int = 8

    def __post_init__(self):
        if self.n_sequences < 1 or self.n_frames < 1:
            raise ValueError("n_sequences and n_frames must be >= 1")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sensor: SensorModel = field(default_factory=SensorModel)
    eval: EvalConfig = field(default_factory=EvalConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


_SECTIONS = {"train": TrainConfig, "sensor": SensorModel,
             "eval": EvalConfig, "backbone": BackboneConfig,
             "gen": GenConfig}
# fields that JSON flattens to lists but the dataclasses hold as tuples
_TUPLE_FIELDS = {"agc_percentiles", "thresholds", "channels"}


def _section_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        if not f.init:
            continue
        v = getattr(obj, f.name)
        if isinstance(v, LossWeights):
            v = [v.lambda1, v.lambda2, v.lambda3, v.lambda4]
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def emit(cfg: RunConfig) -> str:
    doc = {name: _section_dict(getattr(cfg, name)) for name in _SECTIONS}
    doc["workers"] = cfg.workers
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _build_section(cls, d: dict, where: str):
    known = {f.name for f in fields(cls) if f.init}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        if k == "weights" and isinstance(v, (list, tuple)):
            if len(v) != 4:
                raise ConfigError(f"{where}: weights needs 4 entries "
                                  f"(silog, ssim, ordinal, smoothness), "
                                  f"got {len(v)}")
            v = LossWeights(*v)
        elif k in _TUPLE_FIELDS and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def parse(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS) - {"workers"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {name: _build_section(cls, doc.get(name, {}), name)
              for name, cls in _SECTIONS.items()}
    return RunConfig(workers=doc.get("workers", 1), **kwargs)


def load(path) -> RunConfig:
    try:
        with open(path) as f:
            return parse(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def run_hash(cfg: RunConfig) -> str:
    doc = json.loads(emit(cfg))
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
