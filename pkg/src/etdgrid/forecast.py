"""Synthetic multi-step forecasts and the forecast-error discount schedule.

Forecast noise is multiplicative Gaussian with a per-(variable, step) std
calibrated so the mean absolute percentage error matches a target MPE
schedule. Noise values are drawn from a counter-based Philox stream indexed
by ``(origin, variable, step)``, so any sub-range of origins can be generated
independently and still match a full serial run bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .data import YearSeries

VARIABLES = ("pu", "pr", "ci")
_ALIASES = {
    "pu": "pu", "p_u": "pu", "unmet": "pu",
    "pr": "pr", "price": "pr",
    "ci": "ci", "carbon": "ci", "carbon_intensity": "ci",
}

# Six-step-ahead mean percentage errors of the two reference predictors, in percent.
_TABLES = {
    "cnn-lstm": {
        "ci": (6.684, 14.25, 20.19, 33.87, 34.71, 38.52),
        "pr": (9.982, 13.56, 19.71, 26.00, 33.90, 32.17),
        "pu": (14.26, 17.20, 20.55, 26.38, 32.15, 34.69),
    },
    "soit2fnn-mo": {
        "ci": (7.847, 17.38, 27.32, 35.28, 27.32, 37.42),
        "pr": (11.03, 18.52, 24.14, 28.42, 31.96, 34.82),
        "pu": (12.19, 19.12, 24.75, 27.88, 29.40, 29.76),
    },
}
_MODEL_ALIASES = {"cnn-lstm": "cnn-lstm", "cnnlstm": "cnn-lstm",
                  "soit2fnn-mo": "soit2fnn-mo", "soit2fnn": "soit2fnn-mo"}


class ScheduleError(ValueError):
    pass


def _var(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ScheduleError(f"unknown variable {name!r}; expected one of {VARIABLES}") from None


@dataclass(frozen=True, eq=False)
class MpeSchedule:
    """Per-variable, per-step MPE fractions. ``mpe[i, k-1]`` is variable ``VARIABLES[i]`` at step k."""

    mpe: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.mpe, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != 3 or arr.shape[1] < 1:
            raise ScheduleError(f"schedule must have shape (3, T>=1), got {arr.shape}")
        if not np.all((arr >= 0) & (arr < 1)):
            raise ScheduleError("MPE fractions must lie in [0, 1)")
        arr.setflags(write=False)
        object.__setattr__(self, "mpe", arr)

    @property
    def horizon(self) -> int:
        return self.mpe.shape[1]

    def get(self, variable: str, k: int) -> float:
        if not 1 <= k <= self.horizon:
            raise ScheduleError(f"step {k} outside 1..{self.horizon}")
        return float(self.mpe[VARIABLES.index(_var(variable)), k - 1])

    @classmethod
    def zeros(cls, horizon: int = 6) -> "MpeSchedule":
        return cls(np.zeros((3, horizon)))

    @classmethod
    def from_percent(cls, table: dict[str, tuple[float, ...]]) -> "MpeSchedule":
        return cls(np.array([[p / 100.0 for p in table[v]] for v in VARIABLES]))

    def equals(self, other: "MpeSchedule") -> bool:
        return np.array_equal(self.mpe, other.mpe)


def builtin_schedule(model: str) -> MpeSchedule:
    key = _MODEL_ALIASES.get(model.strip().lower())
    if key is None:
        raise ScheduleError(f"unknown model {model!r}; expected cnn-lstm or soit2fnn-mo")
    return MpeSchedule.from_percent(_TABLES[key])


def load_schedule_csv(path: str | Path) -> MpeSchedule:
    """Read a ``variable,step,mpe_percent`` file; every (variable, step) must appear once."""
    entries: dict[tuple[str, int], float] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["variable", "step", "mpe_percent"]:
            raise ScheduleError(f"{path}: header must be variable,step,mpe_percent")
        for i, row in enumerate(reader, start=1):
            key = (_var(row["variable"]), int(row["step"]))
            if key in entries:
                raise ScheduleError(f"{path}: duplicate entry {key} at row {i}")
            entries[key] = float(row["mpe_percent"]) / 100.0
    steps = sorted({k for _, k in entries})
    T = len(steps)
    if steps != list(range(1, T + 1)) or len(entries) != 3 * T:
        raise ScheduleError(f"{path}: need steps 1..T for all of {VARIABLES}")
    return MpeSchedule(np.array([[entries[(v, k)] for k in steps] for v in VARIABLES]))


def write_schedule_csv(schedule: MpeSchedule, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "step", "mpe_percent"])
        for i, v in enumerate(VARIABLES):
            for k in range(1, schedule.horizon + 1):
                w.writerow([v, k, repr(float(schedule.mpe[i, k - 1]) * 100.0)])


def calibrate_sigma(mpe: float) -> float:
    """Std of ``N(0, s^2)`` whose mean absolute value equals ``mpe``."""
    if not 0 <= mpe < 1:
        raise ScheduleError(f"mpe must be in [0, 1), got {mpe}")
    return mpe * math.sqrt(math.pi / 2)


@dataclass(frozen=True, eq=False)
class ForecastBundle:
    """Per-origin forecasts, each array shaped ``(n_origins, T+1)``.

    Column 0 carries the measured value at the origin hour, columns 1..T the
    predictions for ``t+1 .. t+T``.
    """

    pu: np.ndarray
    pr: np.ndarray
    ci: np.ndarray

    @property
    def horizon(self) -> int:
        return self.pu.shape[1] - 1

    @property
    def n_origins(self) -> int:
        return self.pu.shape[0]

    def variable(self, name: str) -> np.ndarray:
        return getattr(self, _var(name))

    def equals(self, other: "ForecastBundle") -> bool:
        return all(np.array_equal(getattr(self, v), getattr(other, v)) for v in VARIABLES)


def _actual_windows(series: YearSeries, horizon: int, start: int = 0, stop: int | None = None):
    n = len(series) - horizon
    if n <= 0:
        raise ScheduleError(f"series of length {len(series)} is too short for horizon {horizon}")
    stop = n if stop is None else stop
    if not 0 <= start <= stop <= n:
        raise ScheduleError(f"origin range [{start}, {stop}) outside 0..{n}")
    idx = np.arange(start, stop)[:, None] + np.arange(horizon + 1)[None, :]
    return series.unmet[idx], series.price[idx], series.ci[idx]


def actual_forecasts(series: YearSeries, horizon: int) -> ForecastBundle:
    """Perfect foresight: every prediction equals the recorded future value."""
    return ForecastBundle(*_actual_windows(series, horizon))


def counter_normals(seed: int, start: int, count: int) -> np.ndarray:
    """Standard normals ``z[start:start+count]`` of the stream keyed by ``seed``.

    Each value depends only on ``(seed, index)``: one 64-bit Philox output is
    mapped to an open-interval uniform and pushed through the inverse CDF.
    """
    block, offset = divmod(start, 4)
    raw = np.random.Philox(key=seed, counter=block).random_raw(count + offset)[offset:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


def generate_forecasts(series: YearSeries, schedule: MpeSchedule, seed: int,
                       start: int = 0, stop: int | None = None) -> ForecastBundle:
    """Noisy forecasts for origins ``start..stop-1`` (default: all).

    ``forecast(t, v, k) = actual(t+k, v) * (1 + sigma[v][k] * z)`` where ``z`` is
    entry ``(t*3 + v)*T + (k-1)`` of the counter stream. Price and CI
    predictions are floored at zero; unmet power may change sign.
    """
    T = schedule.horizon
    pu, pr, ci = _actual_windows(series, T, start, stop)
    n = pu.shape[0]
    sigma = np.vectorize(calibrate_sigma)(schedule.mpe)  # (3, T)
    z = counter_normals(seed, start * 3 * T, n * 3 * T).reshape(n, 3, T)
    factor = 1.0 + sigma[None, :, :] * z
    out = []
    for i, arr in enumerate((pu, pr, ci)):
        arr = arr.copy()
        arr[:, 1:] *= factor[:, i, :]
        if VARIABLES[i] != "pu":
            np.maximum(arr[:, 1:], 0.0, out=arr[:, 1:])
        out.append(arr)
    return ForecastBundle(*out)


def measure_mpe(bundle: ForecastBundle, series: YearSeries, floor_fraction: float = 0.01) -> MpeSchedule:
    """Realized mean absolute percentage error per variable and step.

    Denominators are floored at ``floor_fraction`` times the variable's mean
    absolute value over the series, which guards unmet power near zero.
    """
    T = bundle.horizon
    n = bundle.n_origins
    if n == 0:
        raise ScheduleError("empty forecast bundle")
    if n + T > len(series):
        raise ScheduleError("bundle extends past the series")
    actual = dict(zip(VARIABLES, _actual_windows(series, T, 0, n)))
    full = {"pu": series.unmet, "pr": series.price, "ci": series.ci}
    rows = []
    for v in VARIABLES:
        a = actual[v][:, 1:]
        f = bundle.variable(v)[:, 1:]
        floor = floor_fraction * float(np.mean(np.abs(full[v])))
        denom = np.maximum(np.abs(a), floor)
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.where(denom > 0, np.abs(f - a) / np.where(denom > 0, denom, 1.0), 0.0)
        rows.append(err.mean(axis=0))
    # realized errors can exceed 100%; keep the schedule type's [0, 1) contract
    return MpeSchedule(np.minimum(np.array(rows), np.nextafter(1.0, 0.0)))


@dataclass(frozen=True)
class ContributionWeights:
    w_u: float
    w_pr: float
    w_ci: float

    def __post_init__(self) -> None:
        if min(self.w_u, self.w_pr, self.w_ci) < 0 or abs(self.w_u + self.w_pr + self.w_ci - 1) > 1e-12:
            raise ScheduleError(f"weights must be non-negative and sum to 1: {self}")


def contribution_weights(alpha: float, pairing: str = "derivation") -> ContributionWeights:
    """Share of each forecast variable in the reward.

    Unmet power drives both cost and emission terms (weight 1/2). Under the
    default ``"derivation"`` pairing price, which only enters the cost term,
    gets ``1/(2+2a)`` and carbon intensity gets ``a/(2+2a)``; ``"swapped"``
    exchanges those two for sensitivity checks.
    """
    if alpha < 0:
        raise ScheduleError(f"alpha must be >= 0, got {alpha}")
    cost_share = 1.0 / (2 + 2 * alpha)
    emission_share = alpha / (2 + 2 * alpha)
    if pairing == "derivation":
        return ContributionWeights(0.5, cost_share, emission_share)
    if pairing == "swapped":
        return ContributionWeights(0.5, emission_share, cost_share)
    raise ScheduleError(f"unknown pairing {pairing!r}")


def combined_uncertainty(weights: ContributionWeights, schedule: MpeSchedule, k: int) -> float:
    if not 1 <= k <= schedule.horizon:
        raise ScheduleError(f"step {k} outside 1..{schedule.horizon}")
    m = schedule.mpe[:, k - 1]
    return weights.w_u * float(m[0]) + weights.w_pr * float(m[1]) + weights.w_ci * float(m[2])


def gamma_p(p_e: float) -> float:
    """Midpoint of the admissible scaling interval ``[1, 1/(1-p_e)]``."""
    if not 0 <= p_e < 1:
        raise ScheduleError(f"combined uncertainty must be in [0, 1), got {p_e}")
    return (2 - p_e) / (2 * (1 - p_e))


def error_discount(p_e: float, k: int) -> float:
    if not 0 <= p_e < 1:
        raise ScheduleError(f"combined uncertainty must be in [0, 1), got {p_e}")
    if k <= 0:
        return 1.0
    return (2 - p_e) / 2


@dataclass(frozen=True, eq=False)
class ErrorDiscountSchedule:
    gamma_prime: np.ndarray  # index k = 0..T

    def __getitem__(self, k: int) -> float:
        return float(self.gamma_prime[k])

    @property
    def horizon(self) -> int:
        return len(self.gamma_prime) - 1


def discount_schedule(weights: ContributionWeights, schedule: MpeSchedule) -> ErrorDiscountSchedule:
    g = [1.0] + [error_discount(combined_uncertainty(weights, schedule, k), k)
                 for k in range(1, schedule.horizon + 1)]
    return ErrorDiscountSchedule(np.array(g))
