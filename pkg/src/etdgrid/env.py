"""Battery physics and the dispatch MDP.

Sign convention: battery power ``p_b > 0`` charges, ``p_b < 0`` discharges.
Grid import ``p_g`` and curtailment ``p_c`` are both non-negative and the
balance ``p_u + p_b - p_g + p_c = 0`` holds at every step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .data import NormStats, YearSeries

if TYPE_CHECKING:
    from .forecast import ForecastBundle

ACTION_LEVELS: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
N_ACTIONS = len(ACTION_LEVELS)
IDLE = ACTION_LEVELS.index(0.0)

# slack for rounding when checking a power against the SOC bounds
_FEAS_RTOL = 1e-12


class InfeasibleAction(ValueError):
    pass


@dataclass(frozen=True)
class BatteryParams:
    capacity: float = 1000.0
    soc_min: float = 200.0
    soc_max: float = 1000.0
    eta: float = 0.9
    e_max: float = 200.0
    dt: float = 1.0

    def __post_init__(self) -> None:
        if not 0 <= self.soc_min < self.soc_max <= self.capacity:
            raise ValueError("need 0 <= soc_min < soc_max <= capacity")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if not (self.e_max > 0 and self.dt > 0):
            raise ValueError("e_max and dt must be positive")

    @classmethod
    def from_capacity(cls, capacity: float = 1000.0, min_fraction: float = 0.2, **kw) -> "BatteryParams":
        return cls(capacity=capacity, soc_min=min_fraction * capacity, soc_max=capacity, **kw)


@dataclass(frozen=True)
class BatteryState:
    soc: float

    def check(self, params: BatteryParams) -> "BatteryState":
        if not params.soc_min <= self.soc <= params.soc_max:
            raise ValueError(f"soc {self.soc} outside [{params.soc_min}, {params.soc_max}]")
        return self


@dataclass(frozen=True)
class StepOutcome:
    p_b_applied: float
    p_g: float
    p_c: float
    reward: float
    cost_delta: float
    emission_delta: float
    next_soc: float


def action_to_power(level: float, params: BatteryParams) -> float:
    return level * params.e_max / params.dt


def _clamp(p_b: float, soc: float, params: BatteryParams) -> float:
    if p_b > 0:
        return min(p_b, max((params.soc_max - soc) / params.eta / params.dt, 0.0))
    if p_b < 0:
        return max(p_b, min((params.soc_min - soc) * params.eta / params.dt, 0.0))
    return 0.0


def clamp_feasible(p_b: float, state: BatteryState, params: BatteryParams) -> float:
    """Shrink ``p_b`` towards zero until the SOC bounds allow it; never flips sign."""
    return _clamp(p_b, state.soc, params)


def _next_soc(soc: float, p_b: float, params: BatteryParams) -> float:
    e = p_b * params.dt
    if p_b > 0:
        room = (params.soc_max - soc) / params.eta
        if e > room + _FEAS_RTOL * max(1.0, abs(room)):
            raise InfeasibleAction(f"charge {e} kWh exceeds headroom {room} kWh at soc {soc}")
        nxt = soc + params.eta * e
    elif p_b < 0:
        floor = (params.soc_min - soc) * params.eta
        if e < floor - _FEAS_RTOL * max(1.0, abs(floor)):
            raise InfeasibleAction(f"discharge {e} kWh exceeds available {floor} kWh at soc {soc}")
        nxt = soc + e / params.eta
    else:
        return soc
    # absorb last-ulp overshoot at the bounds
    return min(max(nxt, params.soc_min), params.soc_max)


def battery_step(state: BatteryState, p_b: float, params: BatteryParams) -> BatteryState:
    return BatteryState(_next_soc(state.soc, p_b, params))


def grid_balance(p_u: float, p_b: float) -> tuple[float, float]:
    net = p_u + p_b
    return max(net, 0.0), max(-net, 0.0)


def reward(p_u: float, p_b: float, pr: float, ci: float, alpha: float,
           dt: float = 1.0) -> tuple[float, float, float]:
    """Return ``(reward, cost_delta, emission_delta)`` relative to an idle battery."""
    saved = (max(p_u, 0.0) - max(p_u + p_b, 0.0)) * dt
    cost_delta = pr * saved
    emission_delta = ci * saved
    return cost_delta + alpha * emission_delta, cost_delta, emission_delta


def step_physics(p_u: float, pr: float, ci: float, level: float, soc: float,
                 params: BatteryParams, alpha: float) -> StepOutcome:
    """One transition on scalar inputs: power, clamp, balance, reward, then SOC update."""
    p_b = _clamp(action_to_power(level, params), soc, params)
    p_g, p_c = grid_balance(p_u, p_b)
    r, cost, emis = reward(p_u, p_b, pr, ci, alpha, params.dt)
    return StepOutcome(p_b, p_g, p_c, r, cost, emis, _next_soc(soc, p_b, params))


def step_physics_vec(p_u: float, pr: float, ci: float, level: float, soc: np.ndarray,
                     params: BatteryParams, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """``step_physics`` over an array of SOCs; returns ``(reward, next_soc)``.

    Performs the same floating-point operations in the same order as the scalar
    path, so results agree bit for bit.
    """
    p = action_to_power(level, params)
    if p > 0:
        p_b = np.minimum(p, np.maximum((params.soc_max - soc) / params.eta / params.dt, 0.0))
        nxt = soc + params.eta * (p_b * params.dt)
    elif p < 0:
        p_b = np.maximum(p, np.minimum((params.soc_min - soc) * params.eta / params.dt, 0.0))
        nxt = soc + (p_b * params.dt) / params.eta
    else:
        p_b = np.zeros_like(soc)
        nxt = soc.copy()
    np.clip(nxt, params.soc_min, params.soc_max, out=nxt)
    saved = (max(p_u, 0.0) - np.maximum(p_u + p_b, 0.0)) * params.dt
    r = pr * saved + alpha * (ci * saved)
    return r, nxt


def state_dim(horizon: int) -> int:
    return 3 * (horizon + 1) + 1


def state_table(series: YearSeries, forecasts: "ForecastBundle", stats: NormStats) -> np.ndarray:
    """Normalized exogenous part of the state for every origin hour, shape ``(n, 3(T+1))``.

    Column 0 of each block is the measured value at the origin; SOC is appended
    per step by the caller.
    """
    n, width = forecasts.pu.shape
    if n > len(series) - (width - 1):
        raise ValueError("forecast bundle overruns the series")
    pu = forecasts.pu.copy()
    pr = forecasts.pr.copy()
    ci = forecasts.ci.copy()
    pu[:, 0] = series.unmet[:n]
    pr[:, 0] = series.price[:n]
    ci[:, 0] = series.ci[:n]
    return np.hstack([stats.scale("pu", pu), stats.scale("pr", pr), stats.scale("ci", ci)])


def build_state(series: YearSeries, forecasts: "ForecastBundle", t: int, soc: float,
                stats: NormStats) -> np.ndarray:
    T = forecasts.horizon
    if t < 0 or t >= forecasts.n_origins or t + T >= len(series):
        raise IndexError(f"hour {t} plus horizon {T} overruns the series/forecasts")
    row = np.empty(state_dim(T))
    row[: T + 1] = stats.scale("pu", np.r_[series.unmet[t], forecasts.pu[t, 1:]])
    row[T + 1: 2 * T + 2] = stats.scale("pr", np.r_[series.price[t], forecasts.pr[t, 1:]])
    row[2 * T + 2: 3 * T + 3] = stats.scale("ci", np.r_[series.ci[t], forecasts.ci[t, 1:]])
    row[-1] = stats.scale("soc", soc)
    return row


def env_step(t: int, action: int, state: BatteryState, series: YearSeries,
             forecasts: "ForecastBundle", params: BatteryParams, alpha: float,
             stats: NormStats) -> tuple[StepOutcome, np.ndarray | None]:
    """Apply action index ``action`` at hour ``t`` using measured values only.

    The second element is the state vector for ``t + 1``, or ``None`` when the
    forecasts end at ``t``.
    """
    p = series[t]
    out = step_physics(p.unmet, p.price, p.carbon_intensity, ACTION_LEVELS[action],
                       state.soc, params, alpha)
    nxt = None
    if t + 1 < forecasts.n_origins:
        nxt = build_state(series, forecasts, t + 1, out.next_soc, stats)
    return out, nxt
