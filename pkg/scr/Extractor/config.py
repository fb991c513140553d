"""
Configuration models for the relation extraction pipeline.

Training defaults: dropout 0.5, learning rate 3e-5, 7 epochs, max sequence
length 512, batch size 32, Adam epsilon 1e-8, one accumulation step, max grad
norm 1, no weight decay, no warmup.
Run configuration files are flat key=value lines with '#' comments.
"""
import os
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

load_dotenv()

LOG_LEVEL = os.getenv("EXTRACTOR_LOG_LEVEL", "INFO")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class SplitterConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    non_terminal_tokens: List[str] = Field(
        default_factory=lambda: ["vivo", "Vmax"],
        description="Words that never end a sentence when followed by a terminator",
    )
    abbreviations: List[str] = Field(
        default_factory=list,
        description="Whole tokens (e.g. 'e.g', 'Fig') after which a terminator never splits",
    )

    @field_validator("non_terminal_tokens", "abbreviations", mode="before")
    @classmethod
    def _comma_separated(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("non_terminal_tokens", "abbreviations")
    @classmethod
    def _no_blank_tokens(cls, value: List[str]) -> List[str]:
        for token in value:
            if not token or any(ch.isspace() for ch in token):
                raise ValueError(f"splitter token {token!r} is empty or contains whitespace")
        return value


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    vocab_size: int = Field(default=0, ge=0, description="Taken from the vocabulary when 0")
    hidden: int = Field(default=64, gt=0)
    layers: int = Field(default=4, description="Encoder depth; the CNN head reads the last four")
    heads: int = Field(default=4, gt=0)
    ff_dim: int = Field(default=128, gt=0)
    max_positions: int = Field(default=512, gt=0)
    cnn_window_sizes: List[int] = Field(default_factory=lambda: [3, 4, 5])
    cnn_filters_per_size: int = Field(default=16, gt=0)
    head_dim: int = Field(default=64, gt=0, description="Output width of each fused affine head")
    n_classes: int = Field(default=11, gt=1)
    dropout: float = 0.5
    include_cls_path: bool = True
    head: Literal["model1", "rbert-cnn"] = "rbert-cnn"
    dtype: Literal["float64", "float32"] = "float64"

    @field_validator("cnn_window_sizes", mode="before")
    @classmethod
    def _comma_separated(cls, value: Any) -> Any:
        return _split_list(value)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.layers < 4:
            raise ValueError("layers must be at least 4")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} is not divisible by heads {self.heads}")
        if not self.cnn_window_sizes or any(k <= 0 for k in self.cnn_window_sizes):
            raise ValueError("cnn_window_sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        return self

    @property
    def n_pooled_features(self) -> int:
        return len(self.cnn_window_sizes) * self.cnn_filters_per_size


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(default=3e-5, gt=0)
    epochs: int = Field(default=7, ge=0)
    batch_size: int = Field(default=32, gt=0)
    adam_epsilon: float = Field(default=1e-8, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    gradient_accumulation_steps: int = Field(default=1, gt=0)
    max_grad_norm: float = Field(default=1.0, gt=0)
    weight_decay: float = Field(default=0.0, ge=0)
    warmup_steps: int = Field(default=0, ge=0)
    dropout: float = Field(default=0.5, ge=0, lt=1)
    seed: int = 42


class RunConfig(BaseModel):
    """Everything one CLI invocation needs, merged from defaults, file and flags"""
    model_config = ConfigDict(extra="forbid")

    abstracts: List[str] = Field(default_factory=list)
    entities: List[str] = Field(default_factory=list)
    relations: List[str] = Field(default_factory=list)
    examples: Optional[str] = None
    vocab: Optional[str] = None
    checkpoint: Optional[str] = None
    output: Optional[str] = None
    predictions: Optional[str] = None
    gold: Optional[str] = None
    log: Optional[str] = None
    report_out: Optional[str] = None
    seed: int = 42
    max_seq_length: int = Field(default=512, ge=8)
    min_frequency: int = Field(default=1, ge=1)
    drop_rare_labels: bool = True

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    splitter: SplitterConfig = Field(default_factory=SplitterConfig)

    @field_validator("abstracts", "entities", "relations", mode="before")
    @classmethod
    def _comma_separated(cls, value: Any) -> Any:
        return _split_list(value)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "splitter": SplitterConfig}


def known_keys() -> List[str]:
    keys = set(RunConfig.model_fields) - set(_SECTIONS)
    for section in _SECTIONS.values():
        keys.update(section.model_fields)
    return sorted(keys)


def load_config_file(path: str) -> Dict[str, str]:
    """
    Read a flat key=value configuration file

    Args:
        path: file with key=value lines; '#' starts a comment

    Returns:
        Raw string values keyed by setting name
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"{path}: setting {key!r} has no value")
    return dict(values)


def build_run_config(values: Mapping[str, Any]) -> RunConfig:
    """
    Route flat settings to the run, model, training and splitter sections.

    A key declared by several sections (seed, dropout) reaches all of them.
    Unknown keys are rejected.
    """
    top_fields = set(RunConfig.model_fields) - set(_SECTIONS)
    unknown = sorted(key for key in values if key not in known_keys())
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

    payload: Dict[str, Any] = {k: v for k, v in values.items() if k in top_fields}
    for name, section in _SECTIONS.items():
        payload[name] = {k: v for k, v in values.items() if k in section.model_fields}
    try:
        return RunConfig(**payload)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
