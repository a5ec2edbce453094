"""Strict JSON run configuration.

Every section maps onto a frozen dataclass; unknown keys, wrong types and
missing sections fail fast with the dotted path of the offending field.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ConfigError
from .networks import C3DConfig, DetectorConfig, F2GConfig
from .networks.labels import DEFAULT_CLASSES
from .pipeline import PipelineConfig
from .training import DetSchedule, F2GSchedule, PhaseSchedule

DEFAULTS_PATH = Path(__file__).with_name("defaults.json")


@dataclass(frozen=True)
class DataConfig:
    classes: tuple[str, ...] = DEFAULT_CLASSES
    num_train: int = 200
    num_val: int = 50
    train_seed: int = 0
    val_seed: int = 1
    instance_range: tuple[int, int] = (2, 4)
    duration_range: tuple[int, int] = (24, 96)
    gap_range: tuple[int, int] = (16, 48)
    noise_level: float = 0.03
    frame_size: tuple[int, int] = (32, 32)

    def spec_kwargs(self) -> dict:
        return {"classes": self.classes, "duration_range": self.duration_range, "gap_range": self.gap_range,
                "noise_level": self.noise_level, "frame_size": self.frame_size}


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    kernel: str = "flow"


@dataclass(frozen=True)
class NetworkConfig:
    c3d: C3DConfig = C3DConfig()
    f2g: F2GConfig = F2GConfig()
    detector: DetectorConfig = DetectorConfig()


@dataclass(frozen=True)
class TrainConfig:
    pr: PhaseSchedule = PhaseSchedule()
    ar: PhaseSchedule = PhaseSchedule()
    f2g: F2GSchedule = F2GSchedule()
    det: DetSchedule = DetSchedule()


@dataclass(frozen=True)
class AblationConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    thresholds: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = DataConfig()
    augment: AugmentConfig = AugmentConfig()
    pipeline: PipelineConfig = PipelineConfig()
    networks: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()
    ablation: AblationConfig = AblationConfig()
    eval_thresholds: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.95)

    def c3d_for(self, out_dim: int) -> C3DConfig:
        return dataclasses.replace(self.networks.c3d, out_dim=out_dim, frame_size=self.data.frame_size)

    def f2g_config(self) -> F2GConfig:
        p = self.pipeline
        return dataclasses.replace(self.networks.f2g, frame_size=self.data.frame_size,
                                   context=p.tau, horizon=p.horizon)

    def detector_config(self) -> DetectorConfig:
        return dataclasses.replace(self.networks.detector, feature_dim=self.networks.c3d.feature_dim,
                                   num_classes=len(self.data.classes))

    def with_seed(self, seed: int) -> "RunConfig":
        """Same run with ``seed`` applied to every training phase."""
        t = self.train
        train = TrainConfig(*(dataclasses.replace(s, seed=seed) for s in (t.pr, t.ar, t.f2g, t.det)))
        return dataclasses.replace(self, seed=seed, train=train)

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{path or '<root>'}: unknown key(s) {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        where = f"{path}.{f.name}" if path else f.name
        kwargs[f.name] = _coerce(hints[f.name], raw[f.name], where)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{path or '<root>'}: {e}") from None


def _coerce(tp, value, where: str):
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        args = typing.get_args(tp)
        item = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(item, v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def parse_config(doc: dict) -> RunConfig:
    """Build a :class:`RunConfig`; absent keys keep their defaults."""
    return _build(RunConfig, doc, "")


def load_config(path=None) -> RunConfig:
    path = Path(path) if path else DEFAULTS_PATH
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return parse_config(doc)


def dump_config(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n"


__all__ = [
    "AblationConfig",
    "AugmentConfig",
    "DEFAULTS_PATH",
    "DataConfig",
    "NetworkConfig",
    "RunConfig",
    "TrainConfig",
    "dump_config",
    "load_config",
    "parse_config",
]
