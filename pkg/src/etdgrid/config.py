"""Training configuration and the flat ``key = value`` config file format.

Lines are ``key = value``; ``#`` starts a comment; keys are TrainConfig field
names. Values given on the command line override values from the file, which
override the defaults below.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .env import BatteryParams

MODES = ("td", "etd")
FORECAST_SOURCES = ("actual-as-prediction", "synthetic-schedule")
FAST_EPISODES = 500


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    episodes: int = 5000
    episode_length: int = 168
    horizon: int = 6
    epsilon: float = 0.1
    batch_size: int = 64
    alpha: float = 0.25
    target_sync_steps: int = 200
    buffer_capacity: int = 10_000
    warmup_transitions: int = 500
    hidden: int = 64
    hidden_layers: int = 3
    # rewards are multiplied by this before entering the replay buffer
    reward_scale: float = 1.0
    seed: int = 0
    mode: str = "td"
    forecast_source: str = "synthetic-schedule"
    weight_pairing: str = "derivation"
    init_soc: str = "min"
    capacity_kwh: float = 1000.0
    soc_min_fraction: float = 0.2
    eta: float = 0.9
    e_max_kwh: float = 200.0
    dt: float = 1.0
    debug_checks: bool = False

    def __post_init__(self) -> None:
        positive = ("lr", "episodes", "episode_length", "horizon", "batch_size", "target_sync_steps",
                    "buffer_capacity", "hidden", "hidden_layers", "reward_scale", "capacity_kwh",
                    "e_max_kwh", "dt")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.alpha < 0 or self.warmup_transitions < 0:
            raise ConfigError("alpha and warmup_transitions must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.forecast_source not in FORECAST_SOURCES:
            raise ConfigError(f"forecast_source must be one of {FORECAST_SOURCES}")
        if self.weight_pairing not in ("derivation", "swapped"):
            raise ConfigError("weight_pairing must be 'derivation' or 'swapped'")
        if self.init_soc not in ("min", "random"):
            raise ConfigError("init_soc must be 'min' or 'random'")
        self.battery()  # validates the physical parameters

    def battery(self) -> BatteryParams:
        try:
            return BatteryParams.from_capacity(self.capacity_kwh, self.soc_min_fraction,
                                               eta=self.eta, e_max=self.e_max_kwh, dt=self.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        from .env import N_ACTIONS, state_dim
        return (state_dim(self.horizon),) + (self.hidden,) * self.hidden_layers + (N_ACTIONS,)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def fast(cls, **kw) -> "TrainConfig":
        return cls(episodes=FAST_EPISODES, **kw)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"{origin}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                fast: bool = False) -> TrainConfig:
    """Defaults, then the file, then ``--fast``, then explicit overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    if fast:
        values["episodes"] = FAST_EPISODES
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    try:
        return TrainConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_dict().items())
