"""Perfect-information backward induction over bucketed battery SOC.

States at each hour are the SOC values reachable from the initial SOC, merged
into buckets of width ``soc_resolution``; each bucket is represented by the
smallest reachable SOC that falls in it. When no two distinct reachable SOCs
share a bucket (short windows, fine resolution) the recursion is exact.

Otherwise each merge moves the state by less than ``soc_resolution``. The
optimal return is Lipschitz in SOC with constant ``L = max_t(pr_t + alpha*ci_t) / eta``
(clamping at a SOC bound only ever shrinks a SOC gap, and each kWh of gap
closed changes the reward by at most ``w_t / eta``), so the value error is at
most ``L * soc_resolution * n_steps``; see :attr:`DpSolution.tolerance`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import YearSeries
from .env import ACTION_LEVELS, BatteryParams, step_physics, step_physics_vec


@dataclass
class DpSolution:
    soc_resolution: float
    gamma: float
    value: float                 # optimal (discounted) return of the bucketed recursion
    actions: np.ndarray          # optimal action index per step
    realized_reward: float       # undiscounted reward of ``actions`` replayed exactly
    tolerance: float             # bound on |value - exact optimum|
    lipschitz: float
    values: list[np.ndarray]     # V_t over the bucket representatives, t = 0..n
    states: list[np.ndarray]     # bucket representatives (kWh), t = 0..n

    @property
    def total_reward(self) -> float:
        return self.value


def _buckets(soc: np.ndarray, params: BatteryParams, res: float) -> np.ndarray:
    return np.rint((soc - params.soc_min) / res).astype(np.int64)


def _successors(p_u, pr, ci, states, params, alpha):
    r = np.empty((len(states), len(ACTION_LEVELS)))
    nxt = np.empty_like(r)
    for a, level in enumerate(ACTION_LEVELS):
        r[:, a], nxt[:, a] = step_physics_vec(p_u, pr, ci, level, states, params, alpha)
    return r, nxt


def reward_lipschitz(window: YearSeries, params: BatteryParams, alpha: float) -> float:
    return float(np.max(window.price + alpha * window.ci)) / params.eta


def dp_oracle(window: YearSeries, params: BatteryParams, alpha: float, soc_resolution: float = 1.0,
              gamma: float = 1.0, init_soc: float | None = None) -> DpSolution:
    """Maximize the (discounted) sum of step rewards over ``window`` with perfect foresight."""
    if not soc_resolution > 0:
        raise ValueError(f"soc_resolution must be positive, got {soc_resolution}")
    n = len(window)
    if n == 0:
        raise ValueError("empty window")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must be in [0, 1]")
    soc0 = params.soc_min if init_soc is None else float(init_soc)
    if not params.soc_min <= soc0 <= params.soc_max:
        raise ValueError(f"initial soc {soc0} outside bounds")
    pu = window.unmet
    pr, ci = window.price, window.ci

    states = [np.array([soc0])]
    for t in range(n):
        _, nxt = _successors(float(pu[t]), float(pr[t]), float(ci[t]), states[t], params, alpha)
        flat = np.sort(nxt.ravel(), kind="stable")
        b = _buckets(flat, params, soc_resolution)
        first = np.r_[True, b[1:] != b[:-1]]
        states.append(flat[first])

    values = [None] * (n + 1)
    values[n] = np.zeros(len(states[n]))
    policy = [None] * n
    for t in range(n - 1, -1, -1):
        r, nxt = _successors(float(pu[t]), float(pr[t]), float(ci[t]), states[t], params, alpha)
        j = np.searchsorted(_buckets(states[t + 1], params, soc_resolution),
                            _buckets(nxt, params, soc_resolution))
        q = r + gamma * values[t + 1][j]
        best = np.argmax(q, axis=1)
        policy[t] = best
        values[t] = q[np.arange(len(best)), best]

    actions = np.zeros(n, dtype=np.int64)
    i = 0
    soc = soc0
    realized = 0.0
    for t in range(n):
        a = int(policy[t][i])
        actions[t] = a
        _, nxt = _successors(float(pu[t]), float(pr[t]), float(ci[t]), states[t][i:i + 1], params, alpha)
        i = int(np.searchsorted(_buckets(states[t + 1], params, soc_resolution),
                                _buckets(nxt[0, a:a + 1], params, soc_resolution))[0])
        out = step_physics(float(pu[t]), float(pr[t]), float(ci[t]), ACTION_LEVELS[a], soc, params, alpha)
        realized += out.reward
        soc = out.next_soc

    lip = reward_lipschitz(window, params, alpha)
    return DpSolution(soc_resolution, gamma, float(values[0][0]), actions, realized,
                      lip * soc_resolution * n, lip, values, states)

