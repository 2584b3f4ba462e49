"""
Configuration for Record Weaver
Typed run configuration loaded from YAML with --set overrides and a .env output-dir override
"""

import hashlib
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "RECORD_WEAVER_OUTPUT_DIR"

OPENADDRESSES_COLUMNS = {
    "lat": "LAT",
    "long": "LON",
    "number": "NUMBER",
    "street": "STREET",
    "unit": "UNIT",
    "city": "CITY",
    "district": "DISTRICT",
    "region": "REGION",
    "postcode": "POSTCODE",
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ToyConfig(_Section):
    n_records: int = Field(default=1000, gt=0)
    n_zips: int = Field(default=10, ge=2)

    @model_validator(mode="after")
    def _enough_records(self):
        if self.n_records < 10 * self.n_zips:
            raise ValueError("toy dataset needs n_records >= 10 * n_zips")
        return self


class DataConfig(_Section):
    """Where records come from"""

    source: Literal["toy", "csv", "split", "cache"] = "toy"
    csv_path: Optional[str] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    validation_path: Optional[str] = None
    cache_dir: Optional[str] = None
    column_map: Dict[str, str] = Field(default_factory=lambda: dict(OPENADDRESSES_COLUMNS))
    split_seed: Optional[int] = None
    toy: ToyConfig = Field(default_factory=ToyConfig)

    @model_validator(mode="after")
    def _paths_for_source(self):
        if self.source == "csv" and not self.csv_path:
            raise ValueError("data.source=csv needs data.csv_path")
        if self.source == "split" and not (self.train_path and self.test_path):
            raise ValueError("data.source=split needs data.train_path and data.test_path")
        if self.source == "cache" and not self.cache_dir:
            raise ValueError("data.source=cache needs data.cache_dir")
        return self


class ModelConfig(_Section):
    schema_name: str = Field(default="address", alias="schema")
    variant: Literal["tuple", "pass_through", "text_concat"] = "tuple"
    latent_dim: int = Field(default=128, gt=0)
    state_dim: Optional[int] = Field(default=None, gt=0)
    omit_fields: List[str] = Field(default_factory=list)
    max_len: int = Field(default=64, gt=0)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class TrainConfig(_Section):
    """Objective, schedules, augmentation, multiscale levels and optimizer constants"""

    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=64, gt=0)
    warmup_steps: int = Field(default=1000, ge=0)
    beta_start: float = Field(default=0.0, ge=0)
    beta_mid: float = Field(default=0.384, ge=0)
    beta_end: float = Field(default=0.384, ge=0)
    string_sampling: Literal["tf", "as", "ss"] = "tf"
    tuple_sampling: Literal["tf", "as", "ss"] = "tf"

    n_augmented: int = Field(default=0, ge=0)
    p_sampled: float = Field(default=0.2, gt=0, le=1)
    gen_start_step: int = Field(default=0, ge=0)

    multiscale: Literal["off", "linear", "geometric", "inverted", "capacity"] = "off"
    n_kl_weight: int = Field(default=32, ge=1)
    ratio: float = 0.9
    beta_max_start: float = Field(default=0.64, gt=0)
    beta_max_end: float = Field(default=0.64, gt=0)
    capacity_min: float = Field(default=10.0, ge=0)
    capacity_increment: float = Field(default=0.5, ge=0)
    gamma: float = Field(default=128.0, gt=0)
    p_sampled_spacing: Literal["constant", "linear", "geometric"] = "constant"
    p_min: float = Field(default=0.2, gt=0, le=1)
    p_max: float = Field(default=1.0, gt=0, le=1)

    learning_rate: float = Field(default=2.5e-4, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_epsilon: float = Field(default=1e-8, gt=0)
    decay_rate: float = Field(default=0.99, gt=0)
    decay_steps: int = Field(default=1000, gt=0)
    clip_norm: float = Field(default=0.01, gt=0)

    latent_decay: float = Field(default=0.999, gt=0, lt=1)
    tracker_lowest_level_only: bool = False
    skew_in_average: bool = True
    field_weights: Dict[str, float] = Field(default_factory=dict)

    log_every: int = Field(default=100, gt=0)
    eval_every: int = Field(default=1000, gt=0)
    eval_batch_size: int = Field(default=256, gt=0)
    generated_eval_size: int = Field(default=256, gt=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.steps > 0 and self.warmup_steps > self.steps:
            raise ValueError("warmup_steps must not exceed steps")
        if self.multiscale in ("geometric", "inverted", "capacity") and not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if self.p_min > self.p_max:
            raise ValueError("p_min must not exceed p_max")
        return self


class EvalConfig(_Section):
    checkpoint: Optional[str] = None
    split: Literal["train", "test", "validation"] = "test"
    n_generate: int = Field(default=10000, gt=0)
    n_pvalue: int = Field(default=10000, gt=0)
    n_levenshtein: int = Field(default=10000, gt=0)
    repeat_rounds: int = Field(default=10, ge=1)
    repeat_size: int = Field(default=10000, gt=0)
    interpolate_k: int = Field(default=20, ge=2)
    interpolate_pair: List[int] = Field(default_factory=lambda: [0, 1], min_length=2, max_length=2)
    argmax: bool = False
    batch_size: int = Field(default=500, gt=0)


class OutputConfig(_Section):
    dir: str = "runs"


class RunConfig(_Section):
    seed: int = 0
    precision: Literal["float64", "float32"] = "float64"
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


def _format_errors(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        path = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{path}: {item['msg']}")
    return "; ".join(parts)


def _set_path(data: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set {dotted}: {key} is not a section")
        node = child
    node[keys[-1]] = value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply --set section.key=value overrides

    Values are parsed as YAML scalars, so 0 is an int and [0, 5] a list.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"override has an empty key: {item!r}")
        try:
            value = yaml.safe_load(raw) if raw.strip() else ""
        except yaml.YAMLError as e:
            raise ConfigError(f"unparseable override value for {key}: {e}") from e
        _set_path(data, key, value)
    return data


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = (),
                env_file: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Build the RunConfig for one run

    Args:
        path: YAML file; defaults are used when omitted
        overrides: --set items applied after the file
        env_file: .env file to read; the default search is used when omitted

    Returns:
        RunConfig: Validated configuration
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        data = loaded or {}
    apply_overrides(data, overrides)

    load_dotenv(dotenv_path=env_file, override=False)
    env_dir = os.getenv(OUTPUT_DIR_ENV)
    if env_dir:
        logger.info("Output directory overridden by %s=%s", OUTPUT_DIR_ENV, env_dir)
        _set_path(data, "output.dir", env_dir)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_format_errors(e)}") from None


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json", by_alias=True)


def config_to_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=True)


def config_hash(config: RunConfig) -> str:
    """First 12 hex characters of the SHA-256 of the resolved YAML"""
    return hashlib.sha256(config_to_yaml(config).encode("utf-8")).hexdigest()[:12]


def write_resolved_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(config_to_yaml(config))
    return path
