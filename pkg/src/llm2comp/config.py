"""Model and stage configuration, loaded from JSON with unknown keys rejected."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .errors import ConfigError

# Per-stage defaults (lr, weight_decay, dropout_rate).
STAGE_DEFAULTS = {
    "pretext": (1e-4, 1e-5, 0.0),
    "ucl": (3e-5, 1e-3, 0.2),
    "scl": (1e-4, 3e-4, 0.0),
}


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    base_vocab: int = 259
    n_memory_tokens: int = 8
    max_seq_len: int = 256
    rope_theta: float = 10000.0
    dropout_rate: float = 0.0
    lora_rank: int = 16
    lora_alpha: float = 32.0
    encoder_mask: Literal["causal", "bidirectional"] = "bidirectional"

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if min(self.n_layers, self.n_heads, self.d_model, self.d_ff, self.n_memory_tokens,
               self.lora_rank, self.base_vocab, self.max_seq_len) < 1:
            raise ValueError("sizes must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be a multiple of n_heads")
        if (self.d_model // self.n_heads) % 2:
            raise ValueError("head dimension must be even for rotary positions")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        return self

    @property
    def total_vocab(self) -> int:
        return self.base_vocab + self.n_memory_tokens

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class StageConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage: Literal["pretext", "ucl", "scl"]
    objective: Literal["rc", "nll", "ctkd"] = "ctkd"
    ctkd_mode: Literal["full_kl", "token_ratio"] = "full_kl"
    steps: int = 100
    batch_size: int = 4
    lr: Optional[float] = None
    min_lr: float = 1e-5
    warmup_steps: int = 10
    weight_decay: Optional[float] = None
    dropout_rate: Optional[float] = None
    tau: float = 0.05
    seed: int = 0
    k: int = 8
    model: ModelConfig = ModelConfig()
    data_path: Optional[str] = None
    init_checkpoint: Optional[str] = None
    # causal-LM steps used to fit the frozen base model when no checkpoint seeds it
    base_lm_steps: int = 0
    base_lm_lr: float = 3e-3

    @model_validator(mode="before")
    @classmethod
    def _fill_stage_defaults(cls, values):
        if isinstance(values, dict) and values.get("stage") in STAGE_DEFAULTS:
            lr, wd, drop = STAGE_DEFAULTS[values["stage"]]
            values = dict(values)
            for key, default in (("lr", lr), ("weight_decay", wd), ("dropout_rate", drop)):
                if values.get(key) is None:
                    values[key] = default
            model = values.get("model")
            if "k" in values and (model is None or (isinstance(model, dict)
                                                   and "n_memory_tokens" not in model)):
                values["model"] = {**(model or {}), "n_memory_tokens": values["k"]}
        return values

    @model_validator(mode="after")
    def _check(self) -> "StageConfig":
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.min_lr > 0 or self.lr < self.min_lr:
            raise ValueError("need lr >= min_lr > 0")
        if not 0 <= self.warmup_steps < self.steps:
            raise ValueError("warmup_steps must lie in [0, steps)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.k != self.model.n_memory_tokens:
            raise ValueError(f"k={self.k} disagrees with model.n_memory_tokens={self.model.n_memory_tokens}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a u64")
        return self


def load_stage_config(path: str | Path, **overrides) -> StageConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    # relative data paths are taken relative to the config file
    base = Path(path).resolve().parent
    if isinstance(raw.get("data_path"), str) and not Path(raw["data_path"]).is_absolute() \
            and overrides.get("data_path") is None:
        raw["data_path"] = str(base / raw["data_path"])
    try:
        return StageConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
