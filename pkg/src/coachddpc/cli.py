"""Command-line entry point: ``coachddpc <subcommand> ...``.

Every subcommand accepts ``--config`` (a YAML scenario file whose keys act
as defaults for the flags) and ``--seed``.  Each subcommand prints one
``[PASS]``/``[FAIL]`` line per check it performs and exits non-zero when
any check fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .config import load_params
from .data import RawRecordSet, Trajectory, ingest, load_trajectories, save_trajectories
from .ddpc import DdpcConfig
from .errors import ConfigurationError, IntegrationError, PipelineError, ValidationError
from .harness import ScenarioConfig, compare, read_run, run_closed_loop
from .predictor import evaluate_mae, fit_trajectories, load_model, save_model
from .report import emit_report, plot_runs, write_comparison
from .scenarios import (DAY, HOUR, scenario_schedule, simulate_setpoints, synth_raw_records,
                        training_trajectories)
from .sim import DisturbanceSchedule

log = logging.getLogger("coachddpc")


class Checks:
    def __init__(self):
        self.results: list[tuple[str, bool, str]] = []

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.results.append((name, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {name}{': ' + detail if detail else ''}")

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.results)


def _scenario_doc(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    base = Path(path).parent
    for key in ("params", "model", "schedule", "train", "validation", "raw"):
        if key in doc and doc[key] is not None and not Path(doc[key]).is_absolute():
            doc[key] = str(base / doc[key])
    return doc


def _opt(args, doc: dict, name: str, default=None):
    val = getattr(args, name, None)
    if val is not None:
        return val
    return doc.get(name, default)


def _params(args, doc):
    return load_params(_opt(args, doc, "params"))


def _ddpc_config(params, doc) -> DdpcConfig:
    merged = dict(params.ddpc)
    merged.update(doc.get("ddpc", {}) or {})
    return DdpcConfig.from_dict(merged)


def cmd_generate(args, doc, checks: Checks) -> None:
    params = _params(args, doc)
    seed = _opt(args, doc, "seed", 0)
    out = Path(args.out)
    period = float(_opt(args, doc, "period", 300.0))
    train = training_trajectories(params, int(args.days), seed=seed + 1, period=period)
    val = training_trajectories(params, int(args.validation_days), seed=seed + 2, period=period, prefix="val")
    save_trajectories(train, out / "train")
    save_trajectories(val, out / "validation")
    checks.add("generate.trajectories", len(train) == args.days and len(val) == args.validation_days,
               f"{len(train)} training and {len(val)} validation days in {out}")
    if args.raw:
        sched = scenario_schedule(args.raw_scenario, DAY, margin=HOUR)
        t, u, y, d = simulate_setpoints(params, sched, lambda k, _t, rule: rule, DAY, period)
        traj = Trajectory("raw", period, u=u, y=y, d=d, t=t)
        synth_raw_records(traj, sched).to_dir(out / "raw")
        checks.add("generate.raw", (out / "raw" / "hvac.csv").exists(), f"raw records in {out / 'raw'}")


def cmd_ingest(args, doc, checks: Checks) -> None:
    raw = RawRecordSet.from_dir(_opt(args, doc, "raw"))
    period = float(_opt(args, doc, "period", 300.0))
    rho = int(_opt(args, doc, "rho", 12))
    horizon = int(_opt(args, doc, "horizon", 6))
    factors = [int(f) for f in (args.downsample.split(",") if args.downsample else [])]
    min_length = args.min_length if args.min_length is not None else rho + horizon
    by_period, table = ingest(raw, period, min_length=min_length, downsample_factors=factors)
    out = Path(args.out)
    for p, trajs in by_period.items():
        save_trajectories(trajs, out / f"period_{int(p)}s")
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "summary.csv", index=False)
    print(table.to_string(index=False))
    checks.add("ingest.trajectories", len(by_period[period]) > 0,
               f"{len(by_period[period])} trajectories at {period:.0f} s")


def cmd_fit(args, doc, checks: Checks) -> None:
    rho = int(_opt(args, doc, "rho", 12))
    horizon = int(_opt(args, doc, "horizon", 6))
    trajs = load_trajectories(_opt(args, doc, "train"))
    period = _opt(args, doc, "period")
    if period is not None:
        bad = [t.id for t in trajs if not np.isclose(t.sample_period, float(period))]
        if bad:
            raise ValidationError(f"trajectories {bad[:3]} are not sampled at {period} s")
    model = fit_trajectories(trajs, rho, horizon, standardize=args.standardize)
    path = save_model(model, args.out)
    again = load_model(path)
    same = np.array_equal(again.H, model.H) and np.array_equal(again.phi, model.phi)
    checks.add("fit.model_written", same, f"{path} ({model.meta['n_columns']} columns, "
               f"regularization {model.meta['regularization']})")


def cmd_evaluate(args, doc, checks: Checks) -> None:
    model = load_model(_opt(args, doc, "model"))
    val = load_trajectories(_opt(args, doc, "validation"))
    rep = evaluate_mae(model, val)
    frame = pd.DataFrame(rep.rows())
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.report, index=False, float_format="%.6g")
    print(frame.to_string(index=False))
    last = float(rep.per_step[-1])
    checks.add("evaluate.mae_last_step", last <= args.mae_limit, f"{last:.4f} K <= {args.mae_limit} K")


def _schedule(args, doc) -> tuple[str, DisturbanceSchedule, float]:
    duration = float(_opt(args, doc, "duration_h", 24.0)) * HOUR
    path = _opt(args, doc, "schedule")
    if path:
        return Path(path).stem, DisturbanceSchedule.from_csv(path), duration
    name = _opt(args, doc, "scenario", "march")
    return name, scenario_schedule(name, duration), duration


def _run_checks(logs, cfg: ScenarioConfig, checks: Checks) -> None:
    c = cfg.ddpc
    a = logs.get("activated")
    if a is None:
        return
    st = a.step_frame()
    solved = st[st.status != "warmup"]
    band = np.max(np.abs(st.u_star - st.t_rule)) if len(st) else 0.0
    u = st.u_star.to_numpy()
    rate = np.max(np.abs(np.diff(u))) if u.size > 1 else 0.0
    checks.add("simulate.setpoint_band", band <= c.setpoint_band + 1e-6, f"max |u-rule| = {band:.6f} K")
    checks.add("simulate.setpoint_rate", rate <= c.delta_t_max + 1e-6, f"max |du| = {rate:.6f} K")
    if len(solved):
        checks.add("simulate.solver_optimal", bool((solved.status == "Optimal").all()),
                   f"{int((solved.status == 'Optimal').sum())}/{len(solved)} solves optimal")
        checks.add("simulate.kkt", float(solved.kkt.max()) <= 1e-6, f"max KKT residual {solved.kkt.max():.2e}")


def cmd_simulate(args, doc, checks: Checks) -> None:
    params = _params(args, doc)
    cfg_ddpc = _ddpc_config(params, doc)
    name, sched, duration = _schedule(args, doc)
    cfg = ScenarioConfig(
        name=name, schedule=sched, params=params, ddpc=cfg_ddpc, duration=duration,
        control_period=float(_opt(args, doc, "control_period", 300.0)), dt=float(_opt(args, doc, "dt", 10.0)),
        noise_std=float(_opt(args, doc, "noise_std", 0.05)), seed=int(_opt(args, doc, "seed", 0)),
    )
    modes = ["activated", "deactivated"] if args.mode == "both" else [args.mode]
    model = load_model(_opt(args, doc, "model")) if "activated" in modes else None
    logs = {m: run_closed_loop(cfg, m, model) for m in modes}
    cmp = None
    if len(logs) == 2:
        cmp = compare(logs["activated"], logs["deactivated"], cfg.steady_start, t_max=cfg_ddpc.t_max)
    paths = emit_report(logs, cmp, args.out, t_max=cfg_ddpc.t_max, setpoint_band=cfg_ddpc.setpoint_band,
                        title=f"scenario {name}")
    for m, lg in logs.items():
        print(f"{m}: {lg.energy_kwh:.3f} kWh surrogate electrical over the full run")
    _run_checks(logs, cfg, checks)
    if cmp is not None:
        print(json.dumps(cmp.summary(), indent=2))
        checks.add("compare.violation", cmp.violation_a <= args.max_violation,
                   f"average hourly violation {cmp.violation_a:.4f} K")
        checks.add("compare.savings", cmp.savings_pct >= args.min_savings,
                   f"{cmp.savings_pct:.2f} % surrogate savings")
    checks.add("simulate.outputs", all(p.exists() for p in paths), f"{len(paths)} files in {args.out}")


def cmd_compare(args, doc, checks: Checks) -> None:
    a = read_run(args.run_a)
    b = read_run(args.run_b)
    rho = int(_opt(args, doc, "rho", 12))
    period = float(_opt(args, doc, "control_period", 300.0))
    steady = args.steady_start if args.steady_start is not None else a.t[0] + rho * period + 45 * 60
    cmp = compare(a, b, steady, t_max=args.t_max)
    print(json.dumps(cmp.summary(), indent=2))
    if args.out:
        write_comparison(cmp, args.out)
    checks.add("compare.violation", cmp.violation_a <= args.max_violation,
               f"average hourly violation {cmp.violation_a:.4f} K")
    checks.add("compare.savings", cmp.savings_pct >= args.min_savings, f"{cmp.savings_pct:.2f} % surrogate savings")


def cmd_report(args, doc, checks: Checks) -> None:
    run_dir = Path(args.runs)
    logs = {}
    for mode in ("activated", "deactivated"):
        p = run_dir / f"run_{mode}.csv"
        if p.exists():
            logs[mode] = read_run(p)
    if not logs:
        raise ValidationError(f"no run_*.csv files in {run_dir}")
    cmp = None
    if len(logs) == 2:
        rho = int(_opt(args, doc, "rho", 12))
        period = float(_opt(args, doc, "control_period", 300.0))
        t0 = logs["activated"].t[0]
        cmp = compare(logs["activated"], logs["deactivated"], t0 + rho * period + 45 * 60)
        write_comparison(cmp, args.out or run_dir)
    paths = plot_runs(logs, cmp, args.out or run_dir)
    checks.add("report.figures", all(p.exists() for p in paths), ", ".join(str(p) for p in paths))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coachddpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML scenario file; its keys are defaults for the flags")
        p.add_argument("--seed", type=int)
        p.add_argument("--params", help="parameter YAML overriding the built-in defaults")
        p.set_defaults(func=fn)
        return p

    p = add("generate", cmd_generate, "simulate excited training and validation days")
    p.add_argument("--out", required=True)
    p.add_argument("--days", type=int, default=12)
    p.add_argument("--validation-days", type=int, default=3)
    p.add_argument("--period", type=float)
    p.add_argument("--raw", action="store_true", help="also write raw hvac/weather/trip CSVs for one day")
    p.add_argument("--raw-scenario", default="march")

    p = add("ingest", cmd_ingest, "fuse raw CSVs into uniformly sampled trajectories")
    p.add_argument("--raw", help="directory holding hvac.csv, weather.csv, trips.csv")
    p.add_argument("--period", type=float)
    p.add_argument("--rho", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--min-length", type=int)
    p.add_argument("--downsample", help="comma-separated integer factors, e.g. 2,6")
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "identify the predictor from trajectory CSVs")
    p.add_argument("--rho", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--period", type=float)
    p.add_argument("--train")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "multistep MAE of a model on validation trajectories")
    p.add_argument("--model")
    p.add_argument("--validation")
    p.add_argument("--report")
    p.add_argument("--mae-limit", type=float, default=0.5)

    p = add("simulate", cmd_simulate, "closed-loop run(s) with report output")
    p.add_argument("--mode", choices=("activated", "deactivated", "both"), default="both")
    p.add_argument("--scenario", choices=("march", "hot", "cold"))
    p.add_argument("--schedule", help="disturbance schedule CSV instead of a named scenario")
    p.add_argument("--model")
    p.add_argument("--duration-h", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--min-savings", type=float, default=0.0)
    p.add_argument("--max-violation", type=float, default=0.1)

    p = add("compare", cmd_compare, "savings and violations of two run CSVs")
    p.add_argument("--run-a", required=True, help="candidate run (e.g. run_activated.csv)")
    p.add_argument("--run-b", required=True, help="baseline run (e.g. run_deactivated.csv)")
    p.add_argument("--steady-start", type=float)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--out")
    p.add_argument("--min-savings", type=float, default=0.0)
    p.add_argument("--max-violation", type=float, default=0.1)

    p = add("report", cmd_report, "re-render figures from a run directory")
    p.add_argument("--runs", required=True)
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    checks = Checks()
    try:
        doc = _scenario_doc(args.config)
        args.func(args, doc, checks)
    except (ValidationError, ConfigurationError, PipelineError, IntegrationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if checks.ok else 1


if __name__ == "__main__":
    sys.exit(main())
