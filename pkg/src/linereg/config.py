"""Run configuration: every knob of a generate/train/register/bench run in one JSON document."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .baselines import IclConfig
from .errors import ConfigError
from .features import NetConfig
from .pose import RansacConfig
from .synth import NoiseConfig, PoseRanges

METHODS = ("net", "icl", "regression")
FORMAT = "linereg.config/1"

_SECTIONS = {"net": NetConfig, "noise": NoiseConfig, "ransac": RansacConfig, "icl": IclConfig}


@dataclass(frozen=True)
class RunConfig:
    """Sub-configs plus matcher, data, training and benchmark settings.

    ``profile`` only records where the defaults came from; ``desk`` is the
    small default, ``paper`` switches the network to full width and depth.
    """

    net: NetConfig = field(default_factory=NetConfig.desk)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    icl: IclConfig = field(default_factory=IclConfig)
    profile: str = "desk"
    method: str = "net"
    seed: int = 0
    # matcher
    sinkhorn_lambda: float = 0.1
    sinkhorn_iters: int = 30
    top_k: int = 200
    # scene generation
    num_scenes: int = 200
    num_lines: int = 40
    overlap: float = 0.7
    rot_range_deg: tuple = (0.0, 45.0)
    trans_range_m: tuple = (-2.0, 2.0)
    axis_aligned_fraction: float = 0.5
    # training
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 12
    # K of the logged precision; 0 means the scene's true match count
    precision_k: int = 0
    # random rigid re-posing of training pairs (composed into the gt pose)
    augment: bool = False
    # benchmark
    rotation_thresholds: tuple = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 45.0, 90.0, 180.0)
    translation_thresholds: tuple = (0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0)
    sweep_levels: int = 6

    def __post_init__(self):
        for name in ("rot_range_deg", "trans_range_m", "rotation_thresholds", "translation_thresholds"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.sinkhorn_lambda <= 0 or self.sinkhorn_iters < 1:
            raise ConfigError("sinkhorn_lambda must be > 0 and sinkhorn_iters >= 1")
        if self.top_k < 1 or self.num_scenes < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("top_k, num_scenes, batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.overlap <= 1.0:
            raise ConfigError("overlap must be in (0, 1]")
        if self.learning_rate < 0 or self.precision_k < 0 or self.sweep_levels < 2:
            raise ConfigError("learning_rate, precision_k must be >= 0 and sweep_levels >= 2")
        if not 0.0 <= self.axis_aligned_fraction <= 1.0:
            raise ConfigError("axis_aligned_fraction must be in [0, 1]")
        for name in ("rot_range_deg", "trans_range_m"):
            lo, hi = getattr(self, name)
            if len(getattr(self, name)) != 2 or lo > hi:
                raise ConfigError(f"{name} must be an interval (lo, hi) with lo <= hi")

    @property
    def pose_ranges(self) -> PoseRanges:
        return PoseRanges(self.rot_range_deg, self.trans_range_m)

    @classmethod
    def desk(cls, **overrides) -> "RunConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        overrides.setdefault("net", NetConfig.paper())
        overrides.setdefault("profile", "paper")
        return cls(**overrides)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {"format": FORMAT}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in _SECTIONS:
                value = {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(value).items()}
            elif isinstance(value, tuple):
                value = list(value)
            d[f.name] = value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        fmt = d.pop("format", FORMAT)
        if fmt != FORMAT:
            raise ConfigError(f"unsupported config format {fmt!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        try:
            for key, value in d.items():
                if key in _SECTIONS:
                    sub = _SECTIONS[key]
                    bad = set(value) - {f.name for f in dataclasses.fields(sub)}
                    if bad:
                        raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
                    value = sub(**value)
                kwargs[key] = value
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())
