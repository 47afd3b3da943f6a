"""
Pipeline configuration.

A single flat pydantic model holds every hyperparameter of every stage. It is
persisted as a `key = value` text file so runs can be diffed; command-line
flags override file values.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

STAGES = ('synth', 'ingest', 'embed', 'explore', 'train', 'eval', 'explain')


class PipelineConfig(BaseModel):
    """
    Every setting of the pipeline, with defaults.

    Attributes are grouped by the stage that consumes them. Stage-specific
    views (`TrainConfig`, `EvalConfig`, ...) are built from this model by the
    owning subpackage.
    """
    model_config = ConfigDict(extra='forbid', validate_assignment=True)

    # Files and run control
    interactions_file: Optional[str] = None
    metadata_file: Optional[str] = None
    workdir: str = 'work'
    seed: int = 7
    deterministic: bool = False
    workers: int = Field(default=4, ge=1)

    # hin
    min_interactions: int = Field(default=12, ge=1)
    n_bridge: int = Field(default=2, ge=1)
    n_train: int = Field(default=4, ge=1)
    max_test_items: Optional[int] = None
    max_sequence_length: Optional[int] = None
    train_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    brand_alias: str = 'brand'
    category_alias: str = 'category'

    # embedding
    dim: int = Field(default=100, ge=1)
    walks_per_node: int = Field(default=20, ge=1)
    walk_length: int = Field(default=10, ge=2)
    window: int = Field(default=5, ge=1)
    negatives_per_pair: int = Field(default=5, ge=1)
    skipgram_epochs: int = Field(default=5, ge=1)
    skipgram_lr: float = Field(default=0.025, gt=0.0)
    path_skipgram_epochs: int = Field(default=5, ge=1)

    # explorer
    max_path_len: int = Field(default=6, ge=2)
    k_actions: int = Field(default=20, ge=1)
    episodes_per_pair: int = Field(default=50, ge=1)
    eval_episodes_per_pair: int = Field(default=20, ge=1)
    top_q: int = Field(default=5, ge=1)
    policy_lr: float = Field(default=0.01, ge=0.0)
    policy_episodes: int = Field(default=2000, ge=1)
    policy_batch_size: int = Field(default=64, ge=1)
    baseline_decay: float = Field(default=0.99, ge=0.0, lt=1.0)

    # attention / recommender
    heads: int = Field(default=4, ge=1)
    lr: float = Field(default=1e-4, ge=0.0)
    epochs: int = Field(default=30, ge=1)
    train_negatives: int = Field(default=4, ge=1)
    batch_size: int = Field(default=32, ge=1)
    optimizer: Literal['sgd', 'adam'] = 'sgd'
    loss_variant: Literal['positive_term', 'negative_only'] = 'positive_term'
    freeze_embeddings: bool = False
    use_item_item_paths: bool = True
    use_user_item_paths: bool = True
    feed_updated_previous: bool = True

    # evaluation
    n_negatives: int = Field(default=500, ge=1)
    ks: List[int] = Field(default_factory=lambda: [1, 5, 10, 20])
    corrected: bool = False

    # explain
    top_paths: int = Field(default=5, ge=1)

    # synth
    synth_users: int = Field(default=200, ge=1)
    synth_items: int = Field(default=400, ge=2)
    synth_brands: int = Field(default=10, ge=1)
    synth_categories: int = Field(default=5, ge=1)
    synth_loyalty: float = Field(default=0.9, ge=0.0, le=1.0)
    synth_sequence_length: int = Field(default=12, ge=1)

    @field_validator('interactions_file', 'metadata_file', 'max_test_items', 'max_sequence_length', mode='before')
    @classmethod
    def _empty_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and not value.strip():
            return None
        return value

    @field_validator('ks', mode='before')
    @classmethod
    def _parse_ks(cls, value: Any) -> Any:
        if isinstance(value, str):
            try:
                return [int(part) for part in value.split(',') if part.strip()]
            except ValueError:
                raise ValueError(f"Cannot parse K list '{value}'")
        return value

    @model_validator(mode='after')
    def _check_invariants(self) -> 'PipelineConfig':
        if not self.ks:
            raise ValueError("ks must not be empty")
        if any(k < 1 for k in self.ks):
            raise ValueError("every K must be >= 1")
        if list(self.ks) != sorted(self.ks):
            raise ValueError(f"ks must be sorted ascending, got {self.ks}")
        if self.n_negatives < max(self.ks):
            raise ValueError(f"n_negatives ({self.n_negatives}) must be >= max(ks) ({max(self.ks)})")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim ({self.dim}) must be divisible by heads ({self.heads})")
        return self

    # Serialization

    def to_text(self) -> str:
        """
        Serialize as a flat `key = value` file in field declaration order.

        Returns:
            The config text; `from_text(to_text())` reproduces this config.
        """
        lines = ['# TMER pipeline configuration']
        for name in type(self).model_fields:
            lines.append(f"{name} = {_format_value(getattr(self, name))}")
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'PipelineConfig':
        """
        Parse a flat `key = value` config text.

        Raises:
            ConfigError: On malformed lines, unknown keys or invalid values
        """
        values: Dict[str, str] = {}
        for line_number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise ConfigError(f"Config line {line_number}: expected 'key = value', got '{raw}'")
            key, value = line.split('=', 1)
            values[key.strip()] = value.strip()
        return cls.build(values)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'PipelineConfig':
        """Load a config file, raising ConfigError if it cannot be read."""
        try:
            text = Path(path).read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigError(f"Cannot read config file '{path}': {str(e)}")
        return cls.from_text(text)

    @classmethod
    def build(cls, values: Dict[str, Any]) -> 'PipelineConfig':
        """Validate raw values, converting pydantic failures to ConfigError."""
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {str(e)}")

    def with_overrides(self, **overrides: Any) -> 'PipelineConfig':
        """
        Return a copy with the given fields replaced; None values are ignored.

        Raises:
            ConfigError: If an override is unknown or invalid
        """
        updates = {key: value for key, value in overrides.items() if value is not None}
        if not updates:
            return self
        merged = self.model_dump()
        merged.update(updates)
        return self.build(merged)


def _format_value(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, list):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
