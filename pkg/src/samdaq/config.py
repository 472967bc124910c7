"""Flat ``key = value`` configuration shared by every part of the model and harness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for unknown keys, unparsable values, or inconsistent settings."""


UPDATE_STRATEGIES = ("none", "sam2_bank", "multiply", "addition")
EMBEDDING_MODES = ("sparse", "dense", "both")
PEFT_TOPOLOGIES = ("parallel", "sequential", "lora")


@dataclass
class Config:
    # encoder
    input_size: int = 64
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    stage_blocks: tuple[int, ...] = (1, 1, 1, 1)
    stage_heads: tuple[int, ...] = (1, 1, 2, 2)
    fpn_width: int = 64
    adapter_rank: int = 8
    freeze_backbone: bool = True
    backbone_seed: int = 0
    supervised_levels: tuple[int, ...] = (4,)
    peft: str = "parallel"
    gradient_bypass: bool = True
    use_depth: bool = True
    use_depth_projector: bool = True
    lora_rank: int = 8
    lora_alpha: float = 16.0
    # temporal memory
    num_frame_queries: int = 30
    num_video_queries: int = 8
    query_hidden_dim: int = 64
    query_heads: int = 1
    update_strategy: str = "addition"
    embedding_mode: str = "sparse"
    bank_size: int = 6
    # decoder
    decoder_rounds: int = 2
    # loss / optimisation
    loss_alpha: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 0.05
    iterations: int = 2000
    clip_length: int = 10
    seed: int = 0
    float64: bool = False
    checkpoint_every: int = 500
    # paths
    data_root: str = ""
    eval_root: str = ""
    out_dir: str = "runs/default"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if len(self.stage_channels) != 4:
            raise ConfigError("stage_channels must list exactly 4 stages")
        if any(b <= a for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ConfigError("stage_channels must strictly increase")
        for key in ("stage_blocks", "stage_heads"):
            if len(getattr(self, key)) != 4:
                raise ConfigError(f"{key} must list exactly 4 stages")
        for ch, heads in zip(self.stage_channels, self.stage_heads):
            if ch % heads:
                raise ConfigError(f"stage width {ch} not divisible by {heads} heads")
        if self.input_size % 16:
            raise ConfigError("input_size must be a multiple of 16")
        if not set(self.supervised_levels) <= {2, 3, 4}:
            raise ConfigError("supervised_levels must be a subset of {2,3,4}")
        if self.update_strategy not in UPDATE_STRATEGIES:
            raise ConfigError(f"unknown update_strategy {self.update_strategy!r}")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise ConfigError(f"unknown embedding_mode {self.embedding_mode!r}")
        if self.peft not in PEFT_TOPOLOGIES:
            raise ConfigError(f"unknown peft topology {self.peft!r}")
        if self.query_hidden_dim % self.query_heads:
            raise ConfigError("query_hidden_dim must be divisible by query_heads")
        if self.adapter_rank < 1 or self.lora_rank < 1:
            raise ConfigError("ranks must be positive")

    def replace(self, **changes: Any) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(known[key], value)
        return cls(**kwargs)

    def dumps(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _plain(value: Any) -> Any:
    return list(value) if isinstance(value, tuple) else value


def _coerce(f: dataclasses.Field, value: Any) -> Any:
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind.startswith("tuple"):
            if isinstance(value, str):
                value = [v for v in value.replace(" ", "").split(",") if v]
            return tuple(int(v) for v in value)
        if kind == "bool":
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {f.name}: {value!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str | Path, **overrides: Any) -> Config:
    """Read a flat UTF-8 config file; keys not present keep their defaults."""
    data: dict[str, Any] = parse_config_text(Path(path).read_text(encoding="utf-8"))
    data.update(overrides)
    return Config.from_dict(data)


# Desk-scale overfit preset used by the end-to-end smoke test.
PRESETS: dict[str, dict[str, Any]] = {
    "smoke": dict(input_size=32, lr=1e-3, weight_decay=0.05, iterations=2000),
}


def preset(name: str, **overrides: Any) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return Config(**{**PRESETS[name], **overrides})
