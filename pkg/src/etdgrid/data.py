"""Hourly microgrid time series: loading, synthesis, sensor noise and scaling.

A :class:`YearSeries` is stored column-wise as numpy arrays; iterating it or
indexing a single hour yields :class:`TimePoint` records.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

CSV_HEADER = ("hour", "demand_kw", "res_kw", "price_per_kwh", "ci_kg_per_kwh")


class DataError(ValueError):
    """Raised for malformed or physically invalid input series."""


@dataclass(frozen=True)
class TimePoint:
    hour_index: int
    demand: float
    res_generation: float
    price: float
    carbon_intensity: float

    @property
    def unmet(self) -> float:
        return unmet_power(self)


def unmet_power(p: TimePoint) -> float:
    """Demand not covered by local renewables; negative means surplus."""
    return p.demand - p.res_generation


@dataclass(frozen=True, eq=False)
class YearSeries:
    demand: np.ndarray
    res: np.ndarray
    price: np.ndarray
    ci: np.ndarray
    dt: float = 1.0

    def __post_init__(self) -> None:
        cols = {}
        for name in ("demand", "res", "price", "ci"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            cols[name] = arr
            object.__setattr__(self, name, arr)
        n = len(cols["demand"])
        if any(len(a) != n for a in cols.values()):
            raise DataError("column lengths differ")
        if not self.dt > 0:
            raise DataError(f"dt must be positive, got {self.dt}")
        for name, arr in cols.items():
            bad = np.flatnonzero(~np.isfinite(arr) | (arr < 0))
            if bad.size:
                i = int(bad[0])
                raise DataError(f"{name} at hour {i} is {arr[i]!r}; expected finite and >= 0")

    def __len__(self) -> int:
        return len(self.demand)

    def __getitem__(self, t: int) -> TimePoint:
        if not -len(self) <= t < len(self):
            raise IndexError(t)
        t %= len(self)
        return TimePoint(t, float(self.demand[t]), float(self.res[t]),
                         float(self.price[t]), float(self.ci[t]))

    def __iter__(self) -> Iterator[TimePoint]:
        return (self[t] for t in range(len(self)))

    @property
    def points(self) -> list[TimePoint]:
        return list(self)

    @property
    def hours(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def unmet(self) -> np.ndarray:
        return self.demand - self.res

    def window(self, start: int, stop: int) -> "YearSeries":
        """Contiguous slice, re-indexed so its hours start at 0."""
        if not 0 <= start < stop <= len(self):
            raise DataError(f"window [{start}, {stop}) outside series of length {len(self)}")
        return YearSeries(self.demand[start:stop], self.res[start:stop],
                          self.price[start:stop], self.ci[start:stop], self.dt)

    def equals(self, other: "YearSeries") -> bool:
        return (self.dt == other.dt and len(self) == len(other)
                and all(np.array_equal(getattr(self, c), getattr(other, c))
                        for c in ("demand", "res", "price", "ci")))


def load_csv(path: str | Path, dt: float = 1.0) -> YearSeries:
    """Read a series written in the ``hour,demand_kw,res_kw,price_per_kwh,ci_kg_per_kwh`` layout.

    Row numbers in error messages count data rows from 1 (the header is line 1
    of the file, so data row ``n`` sits on line ``n + 1``).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    cols: list[list[float]] = [[], [], [], []]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: header must be {','.join(CSV_HEADER)}, got {header}")
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path}: row {row_no} (line {row_no + 1})"
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{where}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                hour = int(row[0])
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataError(f"{where}: {exc}") from None
            if hour != row_no - 1:
                raise DataError(f"{where}: hour index {hour} is not contiguous (expected {row_no - 1})")
            for name, v in zip(CSV_HEADER[1:], values):
                if not math.isfinite(v) or v < 0:
                    raise DataError(f"{where}: {name} = {v!r} must be finite and non-negative")
            for col, v in zip(cols, values):
                col.append(v)
    if not cols[0]:
        raise DataError(f"{path}: no data rows")
    return YearSeries(*(np.array(c) for c in cols), dt=dt)


def write_csv(series: YearSeries, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t in range(len(series)):
            # repr() round-trips float64 exactly
            w.writerow([t, repr(float(series.demand[t])), repr(float(series.res[t])),
                        repr(float(series.price[t])), repr(float(series.ci[t]))])


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic benchmark year.

    Night hours are ``[0, sunrise)`` and ``[sunset, 24)``; PV is zero there.
    Price and CI move between their night and day levels following a fixed
    daily profile, so every generated value lies inside the configured range.
    """

    hours: int = 8760
    base_demand_kw: float = 300.0
    diurnal_amplitude: float = 0.35
    demand_noise: float = 0.05
    pv_peak_kw: float = 450.0
    sunrise: int = 6
    sunset: int = 19
    price_night: float = 0.05
    price_day: float = 0.20
    ci_night: float = 0.30
    ci_day: float = 0.50
    dt: float = 1.0


def _daily_profile(h: np.ndarray, weights: dict[tuple[int, int], float]) -> np.ndarray:
    out = np.zeros(h.shape)
    for (lo, hi), w in weights.items():
        out[(h >= lo) & (h < hi)] = w
    return out


def synth_year(config: SynthConfig | None = None, seed: int = 0) -> YearSeries:
    """Generate a deterministic year of hourly demand, PV, price and carbon intensity."""
    c = config or SynthConfig()
    if c.base_demand_kw <= 0:
        raise DataError(f"base_demand_kw must be positive, got {c.base_demand_kw}")
    if not 0 <= c.sunrise < c.sunset <= 24:
        raise DataError("need 0 <= sunrise < sunset <= 24")
    if c.price_night > c.price_day or c.ci_night > c.ci_day:
        raise DataError("night levels must not exceed day levels")
    if c.hours < 1:
        raise DataError("hours must be >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(c.hours)
    h = t % 24
    day = t // 24
    n_days = int(day[-1]) + 1
    season = np.cos(2 * np.pi * (day - 172) / 365.0)  # +1 near midsummer

    # morning bump plus a larger evening peak
    shape = (0.6 * np.exp(-0.5 * ((h - 8) / 2.0) ** 2)
             + np.exp(-0.5 * ((h - 19) / 2.5) ** 2) - 0.35)
    day_level = 1.0 + 0.08 * rng.standard_normal(n_days)
    demand = c.base_demand_kw * (1 + c.diurnal_amplitude * shape) * day_level[day] * (1 - 0.1 * season)
    demand *= 1 + c.demand_noise * rng.standard_normal(c.hours)
    demand = np.clip(demand, 0.0, None)

    span = c.sunset - c.sunrise
    sun = np.where((h >= c.sunrise) & (h < c.sunset),
                   np.sin(np.pi * (h - c.sunrise + 0.5) / span), 0.0)
    clearness = rng.uniform(0.35, 1.0, n_days)
    pv = c.pv_peak_kw * (0.75 + 0.25 * season) * clearness[day] * sun
    pv = np.clip(pv, 0.0, None)

    price_w = _daily_profile(h, {(7, 16): 0.55, (16, 22): 1.0})
    price_w *= rng.uniform(0.8, 1.0, n_days)[day]
    price = c.price_night + (c.price_day - c.price_night) * price_w

    ci_w = _daily_profile(h, {(6, 10): 0.7, (10, 16): 0.35, (16, 22): 1.0})
    ci_w *= rng.uniform(0.85, 1.0, n_days)[day]
    ci = c.ci_night + (c.ci_day - c.ci_night) * ci_w
    return YearSeries(demand, pv, price, ci, dt=c.dt)


@dataclass(frozen=True)
class NoiseSpec:
    relative_std: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.relative_std < 1:
            raise DataError(f"relative_std must be in [0, 1), got {self.relative_std}")

    @classmethod
    def from_percent(cls, percent: float, seed: int, literal_variance: bool = False) -> "NoiseSpec":
        """``percent`` read as a relative std (default) or as a literal variance."""
        frac = percent / 100.0
        return cls(math.sqrt(frac) if literal_variance else frac, seed)


def inject_noise(series: YearSeries, spec: NoiseSpec) -> YearSeries:
    """Multiplicative Gaussian noise on unmet power; demand is re-derived, RES kept.

    Where the noisy demand would go negative (deep surplus hours) the shortfall
    is moved onto RES so that ``demand - res`` still equals the noisy value.
    """
    if spec.relative_std == 0:
        return YearSeries(series.demand, series.res, series.price, series.ci, series.dt)
    eps = np.random.default_rng(spec.seed).normal(0.0, spec.relative_std, len(series))
    noisy_u = series.unmet * (1.0 + eps)
    demand = series.res + noisy_u
    res = series.res.copy()
    neg = demand < 0
    res[neg] = -noisy_u[neg]
    demand[neg] = 0.0
    return YearSeries(demand, res, series.price, series.ci, series.dt)


@dataclass(frozen=True)
class NormStats:
    """Min/max per state variable; ``scale`` maps to [0, 1] (constant 0 if degenerate)."""

    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    def scale(self, name: str, x):
        lo, hi = self.ranges[name]
        if hi == lo:
            return np.zeros_like(np.asarray(x, dtype=np.float64)) if np.ndim(x) else 0.0
        return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) if np.ndim(x) else (float(x) - lo) / (hi - lo)

    def to_dict(self) -> dict:
        return {k: [lo, hi] for k, (lo, hi) in self.ranges.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def compute_norm_stats(series: YearSeries, battery) -> NormStats:
    if len(series) == 0:
        raise DataError("cannot compute statistics of an empty series")
    u = series.unmet
    return NormStats({
        "pu": (float(u.min()), float(u.max())),
        "pr": (float(series.price.min()), float(series.price.max())),
        "ci": (float(series.ci.min()), float(series.ci.max())),
        "soc": (float(battery.soc_min), float(battery.soc_max)),
    })
