"""Experiment configuration: resolved defaults, validation, and JSON round-trip.

A manifest stores the resolved configuration under ``"config"``, so
``load_config`` accepts either a bare configuration or a manifest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..adapter import S_MAX, S_MIN
from ..errors import BalancedLowRankError, ConfigError
from ..gpm import DEFAULT_EPSILON
from ..optimizer import InnerOptimizerConfig

MODES = ("run", "baseline", "merge-experiment", "spectrum", "metrics", "compare")
DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "run"
    seed: int | None = None
    d: int = 32
    n: int = 32
    n_layers: int = 2
    rank: int = 4
    r_plant: int = 4
    T: int = 4
    steps_per_task: int = 500
    n_train: int = 1024
    n_eval: int = 256
    noise_std: float = 0.05
    mu: float = 1.0
    plant_decay: float = 0.6
    overlap: float = 0.0
    input_overlap: float = 0.3
    optimizer: InnerOptimizerConfig = field(default_factory=InnerOptimizerConfig)
    epsilon: float = DEFAULT_EPSILON
    s_min: float = S_MIN
    s_max: float = S_MAX
    n_snapshot: int = 8
    snapshot_batch: int = 128
    use_memory: bool = True
    depth_init: bool = True
    pad_random: bool = True
    alpha_grid: tuple = DEFAULT_ALPHAS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.seed is not None and not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        for name in ("d", "n", "n_layers", "rank", "r_plant", "T", "n_train", "n_eval",
                     "n_snapshot", "snapshot_batch"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.steps_per_task, int) or self.steps_per_task < 0:
            raise ConfigError(f"steps_per_task must be a nonnegative integer, got {self.steps_per_task!r}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        alphas = tuple(float(a) for a in self.alpha_grid)
        if not alphas or any(not 0.0 <= a <= 1.0 for a in alphas):
            raise ConfigError(f"alpha_grid values must lie in [0, 1], got {self.alpha_grid}")
        object.__setattr__(self, "alpha_grid", alphas)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.d, self.n, self.n_layers

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a key/value map")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        data = dict(data)
        opt = data.pop("optimizer", None)
        try:
            if opt is not None:
                if not isinstance(opt, dict):
                    raise ConfigError("optimizer must be a key/value map")
                opt_known = {f.name for f in fields(InnerOptimizerConfig)}
                bad = sorted(set(opt) - opt_known)
                if bad:
                    raise ConfigError(f"unknown optimizer keys: {', '.join(bad)}")
                data["optimizer"] = InnerOptimizerConfig(**opt)
            return cls(**data)
        except ConfigError:
            raise
        except (BalancedLowRankError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["alpha_grid"] = list(self.alpha_grid)
        return out

    def with_updates(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    return ExperimentConfig.from_dict(data)
