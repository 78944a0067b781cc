"""Episode loop, greedy evaluation and the TD vs ETD comparison harness."""
from __future__ import annotations

import csv
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ConfigError, TrainConfig
from .data import NormStats, YearSeries, compute_norm_stats
from .env import ACTION_LEVELS, step_physics, state_table
from .forecast import (ForecastBundle, MpeSchedule, actual_forecasts, contribution_weights,
                       discount_schedule, generate_forecasts)
from .qnet import (AdamState, QNetworkParams, ReplayBuffer, greedy_action, init_params,
                   select_action, sync_target, train_batch)

log = logging.getLogger(__name__)

# stream tags for SeedSequence-derived sub-seeds
_INIT, _LOOP, _FC_TRAIN, _FC_TEST = 0, 1, 2, 3


def sub_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, np.uint64)[0])


@dataclass
class TrainResult:
    params: QNetworkParams
    target: QNetworkParams
    adam: AdamState
    curve: np.ndarray          # total raw reward per episode
    losses: np.ndarray         # mean loss per episode (nan before warmup ends)
    stats: NormStats
    train_steps: int
    rng_state: dict


def one_step_discount(config: TrainConfig, schedule: MpeSchedule | None) -> float:
    """The error discount stored with each transition: 1 in TD mode."""
    if config.mode == "td" or schedule is None:
        return 1.0
    weights = contribution_weights(config.alpha, config.weight_pairing)
    return discount_schedule(weights, schedule)[1]


def training_forecasts(config: TrainConfig, series: YearSeries,
                       schedule: MpeSchedule | None) -> ForecastBundle:
    if config.forecast_source == "actual-as-prediction" or schedule is None:
        if config.forecast_source == "synthetic-schedule":
            raise ConfigError("forecast_source=synthetic-schedule needs an MPE schedule")
        return actual_forecasts(series, config.horizon)
    if schedule.horizon != config.horizon:
        raise ConfigError(f"schedule horizon {schedule.horizon} != config horizon {config.horizon}")
    return generate_forecasts(series, schedule, sub_seed(config.seed, _FC_TRAIN))


def train(config: TrainConfig, train_series: YearSeries, schedule: MpeSchedule | None = None,
          forecasts: ForecastBundle | None = None, stats: NormStats | None = None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run ``config.episodes`` episodes of epsilon-greedy interaction with replay updates.

    Each episode starts at a uniformly drawn hour, resets SOC and runs
    ``episode_length`` steps; the last step is terminal. Deterministic per seed.
    """
    T, K = config.horizon, config.episode_length
    if len(train_series) < K + T:
        raise ConfigError(f"series of length {len(train_series)} shorter than episode + horizon ({K + T})")
    battery = config.battery()
    if forecasts is None:
        forecasts = training_forecasts(config, train_series, schedule)
    if stats is None:
        stats = compute_norm_stats(train_series, battery)
    g1 = one_step_discount(config, schedule)

    table = state_table(train_series, forecasts, stats)
    n = table.shape[0]
    pu, pr, ci = train_series.unmet, train_series.price, train_series.ci
    soc_lo, soc_hi = stats.ranges["soc"]

    params = init_params(config.layer_sizes, np.random.default_rng(sub_seed(config.seed, _INIT)))
    target = sync_target(params)
    adam = AdamState.for_params(params)
    rng = np.random.default_rng(sub_seed(config.seed, _LOOP))
    buf = ReplayBuffer(config.buffer_capacity, table.shape[1] + 1)

    state = np.empty(table.shape[1] + 1)
    nxt = np.empty_like(state)
    curve = np.zeros(config.episodes)
    losses = np.full(config.episodes, np.nan)
    steps = 0
    for ep in range(config.episodes):
        start = int(rng.integers(0, n - K + 1))
        soc = battery.soc_min if config.init_soc == "min" else float(
            rng.uniform(battery.soc_min, battery.soc_max))
        total = 0.0
        ep_losses = []
        for t in range(start, start + K):
            state[:-1] = table[t]
            state[-1] = (soc - soc_lo) / (soc_hi - soc_lo)
            a = select_action(params, state, config.epsilon, rng)
            out = step_physics(float(pu[t]), float(pr[t]), float(ci[t]), ACTION_LEVELS[a],
                               soc, battery, config.alpha)
            terminal = t == start + K - 1
            nxt[:-1] = table[min(t + 1, n - 1)]
            nxt[-1] = (out.next_soc - soc_lo) / (soc_hi - soc_lo)
            buf.push(state, a, out.reward * config.reward_scale, nxt, terminal, g1)
            total += out.reward
            soc = out.next_soc
            if len(buf) >= max(config.warmup_transitions, 1):
                batch = buf.sample(config.batch_size, rng)
                _, _, loss = train_batch(params, target, adam, batch, config.gamma, config.lr,
                                         config.mode, check_finite=config.debug_checks)
                ep_losses.append(loss)
                steps += 1
                if steps % config.target_sync_steps == 0:
                    target = sync_target(params)
        curve[ep] = total
        if ep_losses:
            losses[ep] = float(np.mean(ep_losses))
        if progress is not None:
            progress(ep, total)
    return TrainResult(params, target, adam, curve, losses, stats, steps,
                       rng.bit_generator.state)


def smooth(curve: np.ndarray, window: int = 100) -> np.ndarray:
    """Trailing mean over up to ``window`` episodes."""
    c = np.cumsum(np.r_[0.0, curve])
    idx = np.arange(1, len(curve) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


TRACE_COLUMNS = ("hour", "p_u", "price", "ci", "action", "level", "p_b_applied", "soc",
                 "next_soc", "p_g", "p_c", "reward", "cost_delta", "emission_delta")


@dataclass
class EvalReport:
    acr: float
    cost_reduction: float        # currency over the evaluated period
    emission_reduction: float    # tCO2 over the evaluated period
    alpha: float
    trace: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.trace.get("reward", ()))

    def check_decomposition(self, rtol: float = 1e-6) -> bool:
        recon = float(np.sum(self.trace["cost_delta"]) + self.alpha * np.sum(self.trace["emission_delta"]))
        return abs(recon - self.acr) <= rtol * max(1.0, abs(self.acr))

    def summary(self) -> str:
        return (f"ACR: {self.acr:.6f}\n"
                f"cost reduction: {self.cost_reduction:.6f}\n"
                f"emission reduction (tCO2): {self.emission_reduction:.6f}\n"
                f"steps: {self.steps}")


def rollout(params: QNetworkParams, series: YearSeries, forecasts: ForecastBundle, config: TrainConfig,
            stats: NormStats, start: int = 0, hours: int | None = None) -> EvalReport:
    """Greedy (epsilon = 0) rollout from ``start`` for ``hours`` steps, SOC starting at the minimum."""
    battery = config.battery()
    table = state_table(series, forecasts, stats)
    n = table.shape[0]
    stop = n if hours is None else start + hours
    if not 0 <= start < stop <= n:
        raise ValueError(f"window [{start}, {stop}) outside the {n} forecastable hours")
    soc_lo, soc_hi = stats.ranges["soc"]
    pu, pr, ci = series.unmet, series.price, series.ci
    m = stop - start
    tr = {c: np.zeros(m) for c in TRACE_COLUMNS}
    tr["hour"] = np.arange(start, stop)
    tr["action"] = np.zeros(m, dtype=np.int64)
    state = np.empty(table.shape[1] + 1)
    soc = battery.soc_min
    for i, t in enumerate(range(start, stop)):
        state[:-1] = table[t]
        state[-1] = (soc - soc_lo) / (soc_hi - soc_lo)
        a = greedy_action(params, state)
        out = step_physics(float(pu[t]), float(pr[t]), float(ci[t]), ACTION_LEVELS[a], soc,
                           battery, config.alpha)
        for key, val in (("p_u", pu[t]), ("price", pr[t]), ("ci", ci[t]), ("level", ACTION_LEVELS[a]),
                         ("p_b_applied", out.p_b_applied), ("soc", soc), ("next_soc", out.next_soc),
                         ("p_g", out.p_g), ("p_c", out.p_c), ("reward", out.reward),
                         ("cost_delta", out.cost_delta), ("emission_delta", out.emission_delta)):
            tr[key][i] = val
        tr["action"][i] = a
        soc = out.next_soc
    return EvalReport(acr=float(np.sum(tr["reward"])), cost_reduction=float(np.sum(tr["cost_delta"])),
                      emission_reduction=float(np.sum(tr["emission_delta"])) / 1000.0,
                      alpha=config.alpha, trace=tr)


def evaluate(params: QNetworkParams, test_series: YearSeries, forecasts: ForecastBundle,
             config: TrainConfig, stats: NormStats | None = None) -> EvalReport:
    """Greedy policy over every forecastable hour of ``test_series``."""
    if stats is None:
        stats = compute_norm_stats(test_series, config.battery())
    return rollout(params, test_series, forecasts, config, stats)


def write_trace_csv(report: EvalReport, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        tr = report.trace
        for i in range(report.steps):
            w.writerow([int(tr["hour"][i]) if c == "hour" else
                        int(tr["action"][i]) if c == "action" else repr(float(tr[c][i]))
                        for c in TRACE_COLUMNS])


def read_trace_csv(path: str | Path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in TRACE_COLUMNS}


# --- TD vs ETD comparison ---

@dataclass(frozen=True)
class _Job:
    seed: int
    mode: str
    source: str


def _run_job(job: _Job, config: TrainConfig, train_series: YearSeries, test_series: YearSeries,
             schedule: MpeSchedule) -> tuple[_Job, float, str]:
    cfg = config.replace(seed=job.seed, mode=job.mode, forecast_source=job.source)
    result = train(cfg, train_series, schedule)
    test_fc = generate_forecasts(test_series, schedule, sub_seed(job.seed, _FC_TEST))
    report = evaluate(result.params, test_series, test_fc, cfg, result.stats)
    return job, report.acr, result.params.digest()


@dataclass
class ComparisonTable:
    columns: list[str]
    seeds: list[int]
    acr: dict[tuple[int, str], float]
    digests: dict[tuple[int, str], str] = field(default_factory=dict)

    def median(self, column: str) -> float:
        return statistics.median(self.acr[(s, column)] for s in self.seeds)

    def rows(self) -> list[list[str]]:
        out = [[str(s)] + [repr(self.acr[(s, c)]) for c in self.columns] for s in self.seeds]
        out.append(["median"] + [repr(self.median(c)) for c in self.columns])
        return out

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed"] + self.columns)
            w.writerows(self.rows())

    def format(self) -> str:
        header = ["seed"] + self.columns
        rows = [[r[0]] + [f"{float(x):.3f}" for x in r[1:]] for r in self.rows()]
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        return "\n".join(lines)


def _column(mode: str, source: str) -> str:
    return f"{'DQN' if mode == 'td' else 'ETD-DQN'}/{'actual' if source == 'actual-as-prediction' else 'pred'}"


def max_workers() -> int:
    env = os.environ.get("ETDGRID_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ETDGRID_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def compare_modes(config: TrainConfig, seeds: list[int], train_series: YearSeries,
                  test_series: YearSeries, schedule: MpeSchedule, grid: bool = False,
                  workers: int | None = None) -> ComparisonTable:
    """Train TD and ETD agents on the same data per seed and evaluate on forecast test data.

    With ``grid=True`` both training sources (actual values as predictions and
    synthetic predictions) are run, giving four columns per seed.
    """
    if len(seeds) < 2:
        raise ConfigError("compare needs at least two seeds")
    sources = ["actual-as-prediction", "synthetic-schedule"] if grid else ["synthetic-schedule"]
    combos = [(m, s) for m in ("td", "etd") for s in sources]
    jobs = [_Job(seed, m, s) for seed in seeds for m, s in combos]
    workers = min(workers or max_workers(), len(jobs))
    results = []
    if workers <= 1:
        results = [_run_job(j, config, train_series, test_series, schedule) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_job, j, config, train_series, test_series, schedule) for j in jobs]
            results = [f.result() for f in futures]
    table = ComparisonTable([_column(m, s) for m, s in combos], list(seeds), {})
    for job, acr, digest in results:
        key = (job.seed, _column(job.mode, job.source))
        table.acr[key] = acr
        table.digests[key] = digest
    return table
