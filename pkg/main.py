import argparse
import sys
from dataclasses import replace
from logging import Logger
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import polars as pl

import logger.logger as logger
from agent.loop import (
    collect_initial,
    fixed_action,
    run_baseline,
    run_mbrl,
    run_mbrl_imitation,
    simulate,
)
from agent.metrics import MetricsReport, steps_per_day
from config.experiment import (
    ExperimentConfig,
    build_environment,
    dump_config,
    load_config,
)
from dynamics.model import init_weights
from dynamics.rollout import evaluate_deviation, evenly_spaced_starts
from dynamics.training import train
from errors import ConfigError, HvacMbrlError
from experience.buffer import BufferSnapshot, compute_norm_stats
from get_settings import get_setting
from plant.signals import ACT_FIELDS
from plant.traces import WEATHER_PRESETS
from report.compare import RunComparer, write_comparison

loggers: Logger = logger.get_logger(__name__)

SWEEP_PARAMS = ("epochs", "horizon", "frequency")


def write_report(report: MetricsReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report.daily_frame().write_csv(out_dir / "daily_metrics.csv")
    report.summary_frame().write_csv(out_dir / "summary.csv")
    if report.episode_log is not None:
        report.episode_log.write_csv(out_dir / "episode_log.csv")
    if report.rounds is not None:
        report.rounds.write_csv(out_dir / "rounds.csv")
    if report.plan_log is not None:
        report.plan_log.write_csv(out_dir / "plan_log.csv")
    loggers.info(f"Wrote run outputs to {out_dir}")


def cmd_simulate(
    cfg: ExperimentConfig,
    out_dir: Path,
    controller: str,
    days: int,
    actions_path: Optional[str] = None,
) -> MetricsReport:
    if days < 1:
        raise ConfigError("simulate needs at least one day")
    actions = None
    if actions_path is not None:
        if not Path(actions_path).exists():
            raise ConfigError(f"actions file not found: {actions_path}")
        actions = pl.read_csv(actions_path).select(ACT_FIELDS).to_numpy()
    per_day = steps_per_day(cfg.simulation.control_interval)
    env = build_environment(cfg, days=cfg.traces.days or days + 1)
    report = simulate(
        env, cfg.agent(), controller, days * per_day, actions  # type: ignore[arg-type]
    )
    dump_config(cfg, out_dir / "config.json")
    write_report(report, out_dir)
    return report


def cmd_eval_dynamics(
    cfg: ExperimentConfig,
    out_dir: Path,
    windows: Sequence[int],
    horizon: int = 96,
    starts: int = 20,
    presets: Optional[Sequence[str]] = None,
    eval_days: Optional[int] = None,
) -> pl.DataFrame:
    """
    H-step deviation per weather condition and window length: collect
    exploratory data, train one model per window on the first
    `initial_collect_steps` intervals and roll out over the held-out days.
    """
    if not windows:
        raise ConfigError("eval-dynamics needs at least one window length")
    per_day = steps_per_day(cfg.simulation.control_interval)
    eval_days = eval_days or -(-horizon // per_day) + 1
    n_train = cfg.loop.initial_collect_steps
    n_total = n_train + eval_days * per_day
    if n_train <= max(windows):
        raise ConfigError(
            f"{n_train} training steps are not enough for window {max(windows)}"
        )
    if cfg.traces.weather_path is not None:
        conditions = ["file"]
    else:
        conditions = list(presets or WEATHER_PRESETS)

    rows = []
    for condition in conditions:
        run_cfg = cfg
        if condition != "file":
            run_cfg = replace(
                cfg, traces=replace(cfg.traces, weather_preset=condition)
            )
        env = build_environment(
            run_cfg, days=-(-n_total // per_day) + 1
        )
        agent_cfg = run_cfg.agent()
        buffer = collect_initial(
            env,
            n_total,
            agent_cfg.action_space,
            np.random.default_rng(run_cfg.seed),
            agent_cfg.loop.exploration_half_width,
            capacity=n_total,
            anchor=fixed_action(agent_cfg.action_space, agent_cfg.reward),
        )
        snap = buffer.snapshot()
        train_snap = BufferSnapshot(*(part[:n_train] for part in snap))
        stats = compute_norm_stats(train_snap)
        row: dict[str, object] = {"condition": condition}
        for W in windows:
            model_cfg = replace(run_cfg.model, window=W)
            result = train(
                init_weights(model_cfg, np.random.default_rng(run_cfg.seed)),
                train_snap,
                replace(model_cfg, epochs=run_cfg.loop.epochs),
                stats=stats,
                rng=np.random.default_rng(run_cfg.seed + 1),
            )
            tail = evenly_spaced_starts(n_total - n_train, 1, horizon, starts)
            deviation = evaluate_deviation(
                result.weights,
                stats,
                snap.obs,
                snap.act,
                horizon,
                starts=tail + n_train,
                steps=snap.step,
            )
            row[f"W{W}"] = deviation.mean
            row[f"W{W}_coverage"] = deviation.coverage
            loggers.info(
                f"{condition}: W={W} deviation {deviation.mean:.4f} "
                f"(coverage {deviation.coverage:.2f})"
            )
        rows.append(row)

    table = pl.DataFrame(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.write_csv(out_dir / "deviation_table.csv")
    dump_config(cfg, out_dir / "config.json")
    return table


def cmd_run(
    cfg: ExperimentConfig,
    out_dir: Path,
    mode: Optional[str] = None,
    oracle: bool = False,
) -> MetricsReport:
    if mode is not None:
        cfg = replace(cfg, loop=replace(cfg.loop, mode=mode))  # type: ignore[arg-type]
    dump_config(cfg, out_dir / "config.json")
    env = build_environment(cfg)
    agent_cfg = cfg.agent()
    checkpoint_dir = out_dir / "checkpoint"
    loggers.info(f"Running mode {cfg.loop.mode} into {out_dir}")
    match cfg.loop.mode:
        case "mpc":
            report = run_mbrl(
                env, agent_cfg, oracle=oracle, checkpoint_dir=checkpoint_dir
            )
        case "imitation":
            report = run_mbrl_imitation(
                env, agent_cfg, checkpoint_dir=checkpoint_dir
            )
        case "baseline-fixed":
            report = run_baseline(env, "fixed-setpoint", agent_cfg)
        case _:
            report = run_baseline(env, "default-perturbed", agent_cfg)
    write_report(report, out_dir)
    return report


def cmd_report(
    run_dirs: Sequence[str], out_dir: Path, baseline: Optional[str] = None
) -> pl.DataFrame:
    comparison = RunComparer().compare(run_dirs, baseline)
    write_comparison(comparison, out_dir)
    return comparison.summary


def cmd_sweep(
    cfg: ExperimentConfig,
    out_dir: Path,
    param: str,
    values: Sequence[int],
    mode: Optional[str] = None,
) -> pl.DataFrame:
    """One run per value of `param`, then a report across the runs."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {SWEEP_PARAMS}")
    per_day = steps_per_day(cfg.simulation.control_interval)
    run_dirs = []
    for value in values:
        if param == "epochs":
            run_cfg = replace(cfg, loop=replace(cfg.loop, epochs=value))
        elif param == "horizon":
            run_cfg = replace(cfg, plan=replace(cfg.plan, horizon=value))
        else:
            steps = value * per_day
            rounds = max(1, round(cfg.loop.on_policy_total / steps))
            run_cfg = replace(
                cfg,
                loop=replace(
                    cfg.loop, on_policy_steps=steps, total_rounds=rounds
                ),
            )
        run_dir = out_dir / f"{param}-{value}"
        cmd_run(run_cfg, run_dir, mode)
        run_dirs.append(str(run_dir))
    return cmd_report(run_dirs, out_dir)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvac-mbrl",
        description="Model-based RL for data-centre HVAC setpoint control",
    )
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a fixed controller and log it")
    p.add_argument(
        "--controller",
        choices=("fixed", "default", "scripted"),
        default="fixed",
    )
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--actions", help="CSV of scripted actions")

    p = sub.add_parser("eval-dynamics", help="deviation per window length")
    p.add_argument("--windows", type=_int_list, default=[5, 10, 15, 20])
    p.add_argument("--horizon", type=int, default=96)
    p.add_argument("--starts", type=int, default=20)
    p.add_argument(
        "--presets",
        type=lambda s: [v for v in s.split(",") if v],
        help="weather presets (default: all)",
    )

    p = sub.add_parser("run", help="run an agent or baseline")
    p.add_argument(
        "--mode",
        choices=("mpc", "imitation", "baseline-fixed", "baseline-default"),
    )
    p.add_argument(
        "--oracle",
        action="store_true",
        help="plan with the simulator instead of a learned model",
    )

    p = sub.add_parser("report", help="compare finished runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--baseline")

    p = sub.add_parser("sweep", help="run once per parameter value")
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--values", type=_int_list, required=True)
    p.add_argument(
        "--mode",
        choices=("mpc", "imitation", "baseline-fixed", "baseline-default"),
    )
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Flags override settings, settings override built-in defaults."""
    path = args.config or get_setting("HVAC_MBRL_CONFIG")
    cfg = load_config(path) if path else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = args.out or get_setting("HVAC_MBRL_OUT_DIR")
    if out:
        cfg = replace(cfg, out_dir=out)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    logger.setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out_dir = Path(cfg.out_dir)
        match args.command:
            case "simulate":
                report = cmd_simulate(
                    cfg, out_dir, args.controller, args.days, args.actions
                )
                print(report.summary_frame())
            case "eval-dynamics":
                print(
                    cmd_eval_dynamics(
                        cfg,
                        out_dir,
                        args.windows,
                        args.horizon,
                        args.starts,
                        args.presets,
                    )
                )
            case "run":
                print(cmd_run(cfg, out_dir, args.mode, args.oracle).summary_frame())
            case "report":
                print(cmd_report(args.runs, out_dir, args.baseline))
            case "sweep":
                print(cmd_sweep(cfg, out_dir, args.param, args.values, args.mode))
    except KeyboardInterrupt:
        loggers.warning("Interrupted, progress saved to checkpoint.")
        raise
    except HvacMbrlError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        loggers.exception(f"Unexpected failure: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
