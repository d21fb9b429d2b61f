"""
Settings Module
Run configuration for every command.

A config file (YAML or JSON) holds one mapping per section; missing keys
fall back to the defaults below, and `--set section.key=value` flags are
applied on top. The merged config is hashed and embedded in each run's
metadata so a run can be repeated exactly.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import yaml

from hiersg.commonsense import ValidationConfig
from hiersg.constants import (
    DEFAULT_K_LIST,
    DEFAULT_LAMBDA_STRONG,
    DEFAULT_LAMBDA_WEAK,
    DEFAULT_NUM_CLUSTERS,
    DEFAULT_TEMPERATURE,
    IOU_THRESHOLD,
    KMEANS_MAX_ITER,
)
from hiersg.error_handler import ConfigError
from hiersg.llm_client import ClientConfig
from hiersg.metrics import EvalMode, RecallAveraging
from hiersg.utils import canonical_json, json_default, sha256_hex

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingSettings:
    """Toy training run: model size, optimizer and synthetic data."""
    d: int = 16
    lr: float = 0.01
    steps: int = 2000
    num_pairs: int = 200
    relations_per_category: Tuple[int, ...] = (2, 2, 2)
    in_channels: int = 4
    noise: float = 0.15
    w_sup: float = 1.0
    w_sub: float = 1.0
    w_con: float = 1.0
    w_flat: float = 0.0
    temperature: float = DEFAULT_TEMPERATURE
    normalize_contrastive: bool = True
    init_scale: float = 0.01
    with_flat: bool = False
    samples_path: Optional[str] = None
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, 'relations_per_category', tuple(int(n) for n in self.relations_per_category))
        if self.d < 1 or self.in_channels < 1:
            raise ValueError("d and in_channels must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.steps < 0 or self.num_pairs < 0:
            raise ValueError("steps and num_pairs must be non-negative")
        if not self.relations_per_category or min(self.relations_per_category) < 1:
            raise ValueError("every super-category needs at least one relation")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")

    @property
    def in_dim(self) -> int:
        """Width of a concatenated pair input."""
        return 2 * self.in_channels


@dataclass(frozen=True)
class EvaluationSettings:
    mode: EvalMode = EvalMode.PREDCLS
    k_list: Tuple[int, ...] = DEFAULT_K_LIST
    recall_averaging: RecallAveraging = RecallAveraging.MICRO
    iou_threshold: float = IOU_THRESHOLD
    wmap_top_k: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, 'mode', EvalMode(self.mode.lower()))
        if isinstance(self.recall_averaging, str):
            object.__setattr__(self, 'recall_averaging', RecallAveraging(self.recall_averaging.lower()))
        object.__setattr__(self, 'k_list', tuple(int(k) for k in self.k_list))
        if not self.k_list or min(self.k_list) < 1:
            raise ValueError("k_list must contain positive values")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in (0, 1]")


@dataclass(frozen=True)
class ClusteringSettings:
    k: int = DEFAULT_NUM_CLUSTERS
    n_init: int = 1
    max_iter: int = KMEANS_MAX_ITER
    l2_normalize: bool = False

    def __post_init__(self):
        if self.k < 1 or self.n_init < 1 or self.max_iter < 1:
            raise ValueError("k, n_init and max_iter must be at least 1")


@dataclass(frozen=True)
class DistillationSettings:
    lambda_weak: float = DEFAULT_LAMBDA_WEAK
    lambda_strong: float = DEFAULT_LAMBDA_STRONG


@dataclass(frozen=True)
class RunConfig:
    training: TrainingSettings = field(default_factory=TrainingSettings)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    client: ClientConfig = field(default_factory=ClientConfig)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    clustering: ClusteringSettings = field(default_factory=ClusteringSettings)
    distillation: DistillationSettings = field(default_factory=DistillationSettings)
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if is_dataclass(f.default_factory)}
SCALARS = tuple(f.name for f in fields(RunConfig) if f.name not in SECTIONS)


def _merge_section(name: str, data: Any) -> Any:
    section_cls = SECTIONS[name]
    if data is None:
        return section_cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be a mapping, got {type(data).__name__}")
    merged = asdict(section_cls())
    for key, value in data.items():
        if key not in merged:
            logger.warning("Ignoring unknown config key %s.%s", name, key)
            continue
        merged[key] = value
    return section_cls(**merged)


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Build a RunConfig from nested mappings, defaults filling the gaps."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    for key in data:
        if key not in SECTIONS and key not in SCALARS:
            logger.warning("Ignoring unknown config section %s", key)
    try:
        sections = {name: _merge_section(name, data.get(name)) for name in SECTIONS}
        scalars = {name: int(data[name]) for name in SCALARS if data.get(name) is not None}
        return RunConfig(**sections, **scalars)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Read a YAML or JSON config file; no path means all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.info("Loaded config from %s", path)
    return config_from_dict(data or {})


def to_dict(config: RunConfig) -> Dict[str, Any]:
    """Plain JSON-compatible view (enums by value, tuples as lists)."""
    return json.loads(json.dumps(asdict(config), default=json_default))


def apply_overrides(config: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """
    Apply `section.key=value` (or `seed=N`, `jobs=N`) overrides. Values are
    parsed as YAML, so `0.1`, `true`, `[20, 50]` and `null` work as expected.
    """
    data = to_dict(config)
    for item in overrides:
        if '=' not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split('=', 1)
        value = yaml.safe_load(raw) if raw.strip() else ''
        path = key.strip().split('.')
        if len(path) == 1 and path[0] in SCALARS:
            data[path[0]] = value
        elif len(path) == 2 and path[0] in SECTIONS and path[1] in data[path[0]]:
            data[path[0]][path[1]] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return config_from_dict(data)


def with_flags(config: RunConfig, seed: Optional[int] = None, jobs: Optional[int] = None) -> RunConfig:
    updates = {name: value for name, value in (('seed', seed), ('jobs', jobs)) if value is not None}
    try:
        return replace(config, **updates) if updates else config
    except ValueError as e:
        raise ConfigError(str(e)) from e


def with_section(config: RunConfig, section: str, **values: Any) -> RunConfig:
    """Replace keys of one section from command flags; None means the flag was not given."""
    updates = {key: value for key, value in values.items() if value is not None}
    if not updates:
        return config
    try:
        return replace(config, **{section: replace(getattr(config, section), **updates)})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e


def config_hash(config: RunConfig) -> str:
    return sha256_hex(canonical_json(to_dict(config)))
