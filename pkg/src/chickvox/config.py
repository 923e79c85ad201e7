"""Pipeline configuration: one YAML file, overridable from the command line.

Precedence is flags > config file > defaults. Every key mirrors a dataclass
field below; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .audio_io import BandpassSpec
from .detection import DetectionParams
from .features import FeatureConfig


class ConfigError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class ClusteringSettings:
    methods: tuple[str, ...] = ("kmeans", "hac_ward", "gmm", "fcm")
    k_min: int = 2
    k_max: int = 10
    seed: int | None = 0
    dbscan_eps: float | None = None
    dbscan_min_pts: int | None = None
    # model written to the assignment file; k=None takes its silhouette-best K
    final_method: str = "hac_ward"
    final_k: int | None = None
    representative_percentile: float = 5.0


@dataclasses.dataclass(frozen=True)
class EvaluationSettings:
    # half-widths: an onset matches within +-onset_tol_s
    onset_tol_s: float = 0.05
    # offsets match within +-max(offset_base_tol_s, reference duration / 2)
    offset_base_tol_s: float = 0.1


@dataclasses.dataclass(frozen=True)
class AnalysisSettings:
    r_threshold: float = 0.8
    # list of {"keep": name, "over": name}
    overrides: tuple = ()
    bin_len_s: float = 60.0
    # None: smallest multiple of bin_len_s covering the latest onset
    session_len_s: float | None = None


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    input_dir: str | None = None
    output_dir: str = "chickvox_out"
    annotation_csv: str | None = None
    metadata_csv: str | None = None
    band: BandpassSpec = dataclasses.field(default_factory=BandpassSpec)
    bandpass_before_detection: bool = True
    detection: DetectionParams = dataclasses.field(default_factory=DetectionParams)
    features: FeatureConfig = dataclasses.field(default_factory=FeatureConfig)
    clustering: ClusteringSettings = dataclasses.field(default_factory=ClusteringSettings)
    evaluation: EvaluationSettings = dataclasses.field(default_factory=EvaluationSettings)
    analysis: AnalysisSettings = dataclasses.field(default_factory=AnalysisSettings)
    workers: int = 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def build(cls, data: dict, path: str = ""):
    """Instantiate dataclass ``cls`` from nested plain data."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown config keys at {path or 'top level'}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = _default_of(names[name])
        key = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            value = build(type(default), value, key)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def set_path(data: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key path in nested dicts."""
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a section")
    node[keys[-1]] = value


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a YAML config (optional) and apply dotted-key overrides on top."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        set_path(data, key, value)
    cfg = build(PipelineConfig, data)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    cl = cfg.clustering
    stochastic = {"kmeans", "gmm", "fcm"}
    if (set(cl.methods) | {cl.final_method}) & stochastic and cl.seed is None:
        raise ConfigError("clustering.seed is required when kmeans, gmm or fcm is enabled")
    if "dbscan" in cl.methods and (cl.dbscan_eps is None or cl.dbscan_min_pts is None):
        raise ConfigError("dbscan needs clustering.dbscan_eps and clustering.dbscan_min_pts")
    if not 1 <= cl.k_min <= cl.k_max:
        raise ConfigError("need 1 <= k_min <= k_max")
    a = cfg.analysis
    for o in a.overrides:
        if not isinstance(o, dict) or set(o) != {"keep", "over"}:
            raise ConfigError("analysis.overrides entries need exactly 'keep' and 'over'")
    ev = cfg.evaluation
    if not (ev.onset_tol_s > 0 and ev.offset_base_tol_s > 0):
        raise ConfigError("evaluation tolerances must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")


def check_paths(cfg: PipelineConfig, keys) -> None:
    """Fail early when a path the requested stages read is unset or missing."""
    for key in keys:
        value = getattr(cfg, key)
        if value is None:
            raise ConfigError(f"{key} is not set")
        if not Path(value).exists():
            raise ConfigError(f"{key} not found: {value}")


def dump_default_config() -> str:
    return yaml.safe_dump(_plain(PipelineConfig().to_dict()), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
