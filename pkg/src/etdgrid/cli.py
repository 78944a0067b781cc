"""``etdgrid`` command line: synth, train, eval, simulate, compare, rerun.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage/config/input error.
Every command writes ``manifest.json`` into its output directory; ``rerun``
replays a manifest and checks that the outputs hash identically.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, TrainConfig, load_config
from .data import (DataError, NormStats, NoiseSpec, SynthConfig, inject_noise, load_csv, synth_year,
                   write_csv)
from .forecast import (MpeSchedule, ScheduleError, actual_forecasts, builtin_schedule, generate_forecasts,
                       load_schedule_csv)
from .qnet import Checkpoint, CheckpointError, TrainingError, load_checkpoint, save_checkpoint
from .trainer import (_FC_TEST, compare_modes, rollout, smooth, sub_seed, train, write_trace_csv)

log = logging.getLogger("etdgrid")

MANIFEST = "manifest.json"
TRAIN_SEED_STREAM, TEST_SEED_STREAM = 101, 102


class UsageError(Exception):
    pass


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def parse_schedule(spec: str | None) -> MpeSchedule | None:
    if spec is None or spec == "actual":
        return None
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.is_file():
            raise UsageError(f"schedule file not found: {path}")
        return load_schedule_csv(path)
    return builtin_schedule(spec)


def _abs(p: str | None) -> str | None:
    return None if p is None else str(Path(p).resolve())


def _require_file(p: str, what: str) -> Path:
    path = Path(p)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _config_from_args(args, **extra) -> TrainConfig:
    overrides = {"seed": args.seed, "mode": getattr(args, "mode", None),
                 "episodes": getattr(args, "episodes", None)}
    overrides.update(extra)
    return load_config(args.config, overrides, fast=getattr(args, "fast", False))


def write_manifest(out: Path, command: str, args: argparse.Namespace, inputs: list[Path],
                   outputs: list[Path], config: TrainConfig | None = None, seeds=None) -> None:
    doc = {
        "tool": "etdgrid",
        "version": __version__,
        "command": command,
        "args": {k: v for k, v in vars(args).items() if k not in ("func", "out", "verbose")},
        "config": config.to_dict() if config else None,
        "seeds": seeds,
        "inputs": {str(p.resolve()): sha256(p) for p in inputs},
        "outputs": {p.name: sha256(p) for p in outputs},
        "out_dir": str(out.resolve()),
    }
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- commands ---

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(hours=args.hours, base_demand_kw=args.base_demand, pv_peak_kw=args.pv_peak)
    clean = synth_year(cfg, args.seed)

    def spec(stream):
        return NoiseSpec.from_percent(args.noise_percent, sub_seed(args.seed, stream),
                                      literal_variance=args.literal_variance)
    files = {"clean.csv": clean,
             "train.csv": inject_noise(clean, spec(TRAIN_SEED_STREAM)),
             "test.csv": inject_noise(clean, spec(TEST_SEED_STREAM))}
    for name, series in files.items():
        write_csv(series, out / name)
    write_manifest(out, "synth", args, [], [out / n for n in files], seeds=[args.seed])
    print(f"wrote {', '.join(files)} ({len(clean)} hours) to {out}")
    return 0


def cmd_train(args) -> int:
    data = _require_file(args.data, "data file")
    schedule = parse_schedule(args.schedule)
    source = args.forecast_source or ("synthetic-schedule" if schedule is not None else "actual-as-prediction")
    if source == "synthetic-schedule" and schedule is None:
        raise UsageError("--forecast-source synthetic-schedule needs --schedule")
    config = _config_from_args(args, forecast_source=source)
    if config.mode == "etd" and schedule is None:
        raise UsageError("--mode etd needs --schedule (cnn-lstm, soit2fnn or file:<path>)")
    if config.mode == "td" and schedule is not None:
        log.warning("td mode ignores the MPE schedule for the update%s",
                    "; it only shapes the synthetic training forecasts" if source == "synthetic-schedule" else "")
    series = load_csv(data, config.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(ep, total):
        if (ep + 1) % max(1, config.episodes // 20) == 0:
            log.info("episode %d/%d reward %.3f", ep + 1, config.episodes, total)

    result = train(config, series, schedule, progress=progress)
    ckpt = Checkpoint(result.params, result.target, result.adam, result.rng_state,
                      {"config": config.to_dict(), "norm_stats": result.stats.to_dict(),
                       "schedule": None if schedule is None else schedule.mpe.tolist(),
                       "train_steps": result.train_steps})
    save_checkpoint(out / "checkpoint.json", ckpt)
    sm = smooth(result.curve)
    with (out / "curve.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "reward", "reward_mean100", "loss"])
        for i, (r, s, l) in enumerate(zip(result.curve, sm, result.losses)):
            w.writerow([i, repr(float(r)), repr(float(s)), repr(float(l))])
    inputs = [data] + ([Path(args.config)] if args.config else [])
    if args.schedule and args.schedule.startswith("file:"):
        inputs.append(Path(args.schedule[5:]))
    write_manifest(out, "train", args, inputs, [out / "checkpoint.json", out / "curve.csv"],
                   config, [config.seed])
    print(f"trained {config.episodes} episodes ({result.train_steps} updates); "
          f"last-100 mean reward {sm[-1]:.3f}; checkpoint at {out / 'checkpoint.json'}")
    return 0


def _load_policy(args):
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    data = _require_file(args.data, "data file")
    ckpt = load_checkpoint(ckpt_path)
    cfg_dict = ckpt.extra.get("config")
    if cfg_dict is None or "norm_stats" not in ckpt.extra:
        raise CheckpointError(f"{ckpt_path}: missing training config or normalization statistics")
    config = TrainConfig(**cfg_dict)
    if tuple(ckpt.params.sizes) != config.layer_sizes:
        raise CheckpointError(f"{ckpt_path}: layer sizes {ckpt.params.sizes} do not match config {config.layer_sizes}")
    stats = NormStats.from_dict(ckpt.extra["norm_stats"])
    series = load_csv(data, config.dt)
    schedule = parse_schedule(args.schedule)
    if schedule is None:
        forecasts = actual_forecasts(series, config.horizon)
    else:
        if schedule.horizon != config.horizon:
            raise UsageError(f"schedule horizon {schedule.horizon} != trained horizon {config.horizon}")
        forecasts = generate_forecasts(series, schedule, sub_seed(args.forecast_seed, _FC_TEST))
    inputs = [ckpt_path, data] + ([Path(args.schedule[5:])] if args.schedule and args.schedule.startswith("file:") else [])
    return ckpt, config, stats, series, forecasts, inputs


def cmd_eval(args) -> int:
    ckpt, config, stats, series, forecasts, inputs = _load_policy(args)
    report = rollout(ckpt.params, series, forecasts, config, stats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(report, out / "trace.csv")
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["acr", "cost_reduction", "emission_reduction_t", "steps"])
        w.writerow([repr(report.acr), repr(report.cost_reduction), repr(report.emission_reduction), report.steps])
    write_manifest(out, "eval", args, inputs, [out / "trace.csv", out / "report.csv"], config,
                   [args.forecast_seed])
    print(report.summary())
    return 0


def week_svg(trace: dict, width: int = 900, panel: int = 140) -> str:
    """Three stacked line panels (SOC, price, unmet power) as a standalone SVG."""
    series = [("soc (kWh)", trace["next_soc"], "#1f77b4"),
              ("price", trace["price"], "#d62728"),
              ("unmet power (kW)", trace["p_u"], "#2ca02c")]
    pad = 40
    n = len(trace["hour"])
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{3 * panel + pad}" '
             f'font-family="sans-serif" font-size="11">',
             '<rect width="100%" height="100%" fill="white"/>']
    for i, (label, y, colour) in enumerate(series):
        top = pad / 2 + i * panel
        lo, hi = float(np.min(y)), float(np.max(y))
        span = hi - lo or 1.0
        xs = [pad + (width - 2 * pad) * k / max(n - 1, 1) for k in range(n)]
        ys = [top + (panel - 25) * (1 - (float(v) - lo) / span) for v in y]
        pts = " ".join(f"{x:.1f},{yy:.1f}" for x, yy in zip(xs, ys))
        parts.append(f'<rect x="{pad}" y="{top:.1f}" width="{width - 2 * pad}" height="{panel - 25}" '
                     'fill="none" stroke="#ccc"/>')
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{pad + 4}" y="{top + 12:.1f}">{label}: {lo:.3g} .. {hi:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


SIM_COLUMNS = ("hour", "p_u", "price", "ci", "action", "level", "p_b_applied", "soc", "p_g", "p_c", "reward")


def cmd_simulate(args) -> int:
    ckpt, config, stats, series, forecasts, inputs = _load_policy(args)
    if not (0 <= args.start_hour and args.hours >= 1 and args.start_hour + args.hours <= forecasts.n_origins):
        raise UsageError(f"window [{args.start_hour}, {args.start_hour + args.hours}) outside the "
                         f"{forecasts.n_origins} forecastable hours")
    report = rollout(ckpt.params, series, forecasts, config, stats, args.start_hour, args.hours)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tr = report.trace
    with (out / "week.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIM_COLUMNS)
        for i in range(report.steps):
            # soc is the state of charge after the hour's action
            w.writerow([int(tr["hour"][i]), *(repr(float(tr[c][i])) for c in ("p_u", "price", "ci")),
                        int(tr["action"][i]), repr(float(tr["level"][i])), repr(float(tr["p_b_applied"][i])),
                        repr(float(tr["next_soc"][i])),
                        *(repr(float(tr[c][i])) for c in ("p_g", "p_c", "reward"))])
    (out / "week.svg").write_text(week_svg(tr), encoding="utf-8")
    write_manifest(out, "simulate", args, inputs, [out / "week.csv", out / "week.svg"], config,
                   [args.forecast_seed])
    print(f"simulated hours {args.start_hour}..{args.start_hour + args.hours - 1}: reward {report.acr:.3f}")
    return 0


def cmd_compare(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if len(seeds) < 2:
        raise UsageError("compare needs at least two seeds")
    schedule = parse_schedule(args.schedule)
    if schedule is None:
        raise UsageError("compare needs --schedule (cnn-lstm, soit2fnn or file:<path>)")
    config = load_config(args.config, {"episodes": args.episodes}, fast=args.fast)
    inputs: list[Path] = []
    if args.train or args.test:
        if not (args.train and args.test):
            raise UsageError("--train and --test must be given together")
        train_path, test_path = _require_file(args.train, "train data"), _require_file(args.test, "test data")
        train_series, test_series = load_csv(train_path, config.dt), load_csv(test_path, config.dt)
        inputs = [train_path, test_path]
    else:
        clean = synth_year(SynthConfig(), args.data_seed)
        train_series = inject_noise(clean, NoiseSpec(0.05, sub_seed(args.data_seed, TRAIN_SEED_STREAM)))
        test_series = inject_noise(clean, NoiseSpec(0.05, sub_seed(args.data_seed, TEST_SEED_STREAM)))
    if args.config:
        inputs.append(Path(args.config))
    table = compare_modes(config, seeds, train_series, test_series, schedule, grid=not args.pred_only)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "compare.csv")
    write_manifest(out, "compare", args, inputs, [out / "compare.csv"], config, seeds)
    print(table.format())
    return 0


def cmd_rerun(args) -> int:
    mpath = _require_file(args.manifest, "manifest")
    doc = json.loads(mpath.read_text(encoding="utf-8"))
    for path, digest in doc["inputs"].items():
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"manifest input missing: {p}")
        if sha256(p) != digest:
            raise UsageError(f"manifest input changed since the original run: {p}")
    ns = argparse.Namespace(**doc["args"], out=args.out, verbose=args.verbose)
    code = COMMANDS[doc["command"]](ns)
    if code:
        return code
    new = json.loads((Path(args.out) / MANIFEST).read_text(encoding="utf-8"))
    if new["outputs"] != doc["outputs"]:
        bad = sorted(k for k in doc["outputs"] if new["outputs"].get(k) != doc["outputs"][k])
        print(f"rerun outputs differ from the manifest: {', '.join(bad)}", file=sys.stderr)
        return 1
    print(f"rerun reproduced {len(doc['outputs'])} output file(s) bit for bit")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate,
            "compare": cmd_compare, "rerun": cmd_rerun}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etdgrid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"etdgrid {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("synth", help="write synthetic train/test years")
    common(sp)
    sp.add_argument("--hours", type=int, default=8760)
    sp.add_argument("--base-demand", type=float, default=SynthConfig.base_demand_kw)
    sp.add_argument("--pv-peak", type=float, default=SynthConfig.pv_peak_kw)
    sp.add_argument("--noise-percent", type=float, default=5.0)
    sp.add_argument("--literal-variance", action="store_true",
                    help="read --noise-percent as a variance instead of a relative std")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a DQN / ETD-DQN agent")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--config")
    sp.add_argument("--mode", choices=("td", "etd"))
    sp.add_argument("--schedule", help="cnn-lstm | soit2fnn | file:<path>")
    sp.add_argument("--forecast-source", choices=("actual-as-prediction", "synthetic-schedule"))
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--fast", action="store_true", help=f"{500}-episode profile")
    sp.set_defaults(func=cmd_train)

    for name, helptext, func in (("eval", "evaluate a checkpoint on a series", cmd_eval),
                                 ("simulate", "week-long trace of a checkpoint", cmd_simulate)):
        sp = sub.add_parser(name, help=helptext)
        common(sp, seed=False)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--schedule", default="actual",
                        help="forecasts for the state: actual | cnn-lstm | soit2fnn | file:<path>")
        sp.add_argument("--forecast-seed", type=int, default=0)
        if name == "simulate":
            sp.add_argument("--start-hour", type=int, default=0)
            sp.add_argument("--hours", type=int, default=168)
        sp.set_defaults(func=func)

    sp = sub.add_parser("compare", help="TD vs ETD across seeds")
    common(sp, seed=False)
    sp.add_argument("--seeds", required=True, help="comma-separated, at least two")
    sp.add_argument("--schedule", required=True)
    sp.add_argument("--train")
    sp.add_argument("--test")
    sp.add_argument("--data-seed", type=int, default=1, help="synthetic benchmark seed when no files given")
    sp.add_argument("--config")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--fast", action="store_true")
    sp.add_argument("--pred-only", action="store_true", help="skip the actual-as-prediction training runs")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("rerun", help="replay a manifest and verify output hashes")
    sp.add_argument("manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_rerun)
    return p


def _absolutize(args) -> None:
    for key in ("data", "config", "checkpoint", "train", "test", "manifest"):
        if getattr(args, key, None):
            setattr(args, key, _abs(getattr(args, key)))
    sched = getattr(args, "schedule", None)
    if sched and sched.startswith("file:"):
        args.schedule = "file:" + _abs(sched[5:])
    if getattr(args, "seed", "absent") is None:
        args.seed = 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _absolutize(args)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, DataError, ScheduleError, CheckpointError, FileNotFoundError) as exc:
        print(f"etdgrid {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, OSError, RuntimeError, ValueError) as exc:
        print(f"etdgrid {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
