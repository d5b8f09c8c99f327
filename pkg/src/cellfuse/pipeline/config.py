"""Training configuration: defaults, validation, file loading and overrides."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..encoders import AGGREGATORS
from ..errors import DataError
from ..model import FUSION_VARIANTS, ModelConfig

MAX_NODES_LIMIT = 4096
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    stage: int = 1
    refine_view: str = "pm"
    theta: float = 0.05
    k: int = 4
    lr: float = 1e-4
    batch: int = 128
    epochs: int = 60
    seed: int = 0
    max_nodes: int = 4096
    n_patterns: int = 15000
    aggregator: str = "dg2"
    w_prob: float = 1.0
    w_mcm: float = 1.0
    # model shape and extras
    aig_aggregator: str = "dg2"
    fusion_variant: str = "full"
    pin_encoding: bool = True
    rounds: int = 1
    dim: int = 128
    blocks: int = 4
    heads: int = 8
    enc_heads: int = 4
    micro_batch: int = 16
    lr_schedule: str = "constant"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.stage not in (1, 2):
            raise DataError("stage must be 1 or 2")
        if self.refine_view not in ("pm", "aig"):
            raise DataError("refine_view must be 'pm' or 'aig'")
        if not 0 < self.theta <= 1:
            raise DataError("theta must be in (0, 1]")
        if self.k < 1:
            raise DataError("k must be >= 1")
        if self.lr < 0:
            raise DataError("lr must be >= 0")
        for key in ("batch", "micro_batch", "n_patterns", "max_nodes", "dim", "blocks", "heads", "enc_heads",
                    "rounds"):
            if getattr(self, key) < 1:
                raise DataError(f"{key} must be >= 1")
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if self.max_nodes > MAX_NODES_LIMIT:
            raise DataError(f"max_nodes must be <= {MAX_NODES_LIMIT}")
        for key in ("aggregator", "aig_aggregator"):
            if getattr(self, key) not in AGGREGATORS:
                raise DataError(f"{key} must be one of {list(AGGREGATORS)}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise DataError(f"lr_schedule must be one of {list(LR_SCHEDULES)}")
        if self.fusion_variant not in FUSION_VARIANTS:
            raise DataError(f"fusion_variant must be one of {list(FUSION_VARIANTS)}")
        if (2 * self.dim) % self.heads or self.dim % self.enc_heads:
            raise DataError("dim must be divisible by enc_heads and 2*dim by heads")

    def model(self) -> ModelConfig:
        return ModelConfig(self.aggregator, self.aig_aggregator, self.dim, self.rounds, self.pin_encoding,
                           self.enc_heads, self.blocks, self.heads, self.fusion_variant)

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, step: int, total: int) -> float:
        """Learning rate for global step ``step`` of ``total``."""
        if self.lr_schedule == "constant" or total <= 1:
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))

    @property
    def weights(self) -> dict:
        return {"w_prob": self.w_prob, "w_mcm": self.w_mcm}


CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig))
_TYPES = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}


def _coerce(key: str, value):
    if key not in _TYPES:
        raise DataError(f"unknown config key {key!r}")
    want = _TYPES[key]
    if want is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise DataError(f"config key {key!r} expects a boolean, got {value!r}")
    if want is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise DataError(f"config key {key!r} expects an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise DataError(f"config key {key!r} expects an integer, got {value!r}") from None
    if want is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise DataError(f"config key {key!r} expects a number, got {value!r}") from None
    return str(value)


def config_from_dict(doc: dict, base: TrainConfig | None = None) -> TrainConfig:
    if not isinstance(doc, dict):
        raise DataError("config must be a JSON object")
    values = (base or TrainConfig()).to_dict()
    for key, value in doc.items():
        values[key] = _coerce(key, value)
    return TrainConfig(**values)


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def load_config(path) -> TrainConfig:
    return resolve_config(path)


def parse_overrides(pairs) -> dict:
    """``["k=4", "theta=0.05"]`` -> ``{"k": "4", "theta": "0.05"}`` (coerced later)."""
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise DataError(f"override {pair!r} must look like key=value")
        out[key.strip()] = value.strip()
    return out


def resolve_config(path=None, overrides=None, base: TrainConfig | None = None, **explicit) -> TrainConfig:
    """``base`` (defaults), then file values, then explicit keyword values, then ``key=value`` overrides."""
    cfg = base or TrainConfig()
    if path:
        doc = _read_json(path)
        try:
            cfg = config_from_dict(doc, cfg)
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None
    layer = {k: v for k, v in explicit.items() if v is not None}
    layer.update(parse_overrides(overrides))
    return config_from_dict(layer, cfg) if layer else cfg
