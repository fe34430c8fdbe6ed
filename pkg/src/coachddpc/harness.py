"""Closed-loop runs (rule-based baseline and predictive setpoints), energy accounting and A/B comparison."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .config import SystemParams
from .ddpc import DdpcConfig, DdpcController, StepRecord, compute_t_opt
from .errors import IntegrationError, ValidationError
from .hvac import STATE_CODES, HvacController, HvacMode, rule_based_setpoint
from .predictor import PredictorModel
from .sim import ROOM, CoachState, DisturbanceSchedule, _drive, distribute_heat, rk4_vector

log = logging.getLogger(__name__)

MODES = ("activated", "deactivated")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    schedule: DisturbanceSchedule
    params: SystemParams
    ddpc: DdpcConfig
    duration: float = 24 * 3600.0
    control_period: float = 300.0
    dt: float = 10.0
    noise_std: float = 0.05
    seed: int = 0
    t0: float = 0.0
    initial: CoachState | None = None

    def __post_init__(self):
        stride = self.control_period / self.dt
        if not (self.dt > 0 and math.isclose(stride, round(stride))):
            raise ValidationError("control_period must be a multiple of dt")
        if self.duration < self.ddpc.rho * self.control_period:
            raise ValidationError("duration must cover the warm-up of rho control periods")
        needed = self.t0 + self.duration + self.ddpc.horizon * self.control_period
        if self.schedule.end < needed - self.control_period:
            raise ValidationError(f"schedule ends at {self.schedule.end:.0f} s, forecasts need {needed:.0f} s")

    @property
    def warmup_end(self) -> float:
        return self.t0 + self.ddpc.rho * self.control_period

    @property
    def steady_start(self) -> float:
        return self.warmup_end + 45 * 60.0


@dataclass
class RunLog:
    """Per-``dt`` channels of one run plus the per-period controller records."""

    mode: str
    t: np.ndarray
    t_ref: np.ndarray
    t_rule: np.ndarray
    t_room: np.ndarray      # (n, 3)
    q_hvac: np.ndarray      # (n, 3)
    q_fw: np.ndarray        # (n, 3)
    disturbances: np.ndarray  # (n, 5)
    hvac_state: np.ndarray
    ddpc_status: np.ndarray
    steps: list = field(default_factory=list)
    t_opt: np.ndarray | None = None
    energy_kwh: float = 0.0

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"t": self.t, "t_ref": self.t_ref, "t_rule": self.t_rule})
        for i, deck in enumerate(("up", "mid", "low")):
            df[f"t_room_{deck}"] = self.t_room[:, i]
        for i, deck in enumerate(("up", "mid", "low")):
            df[f"q_hvac_{deck}"] = self.q_hvac[:, i]
        for i, deck in enumerate(("up", "mid", "low")):
            df[f"q_fw_{deck}"] = self.q_fw[:, i]
        for i, name in enumerate(("t_amb", "q_gt", "q_gs", "occupancy", "speed")):
            df[name] = self.disturbances[:, i]
        df["hvac_state"] = self.hvac_state
        df["ddpc_status"] = self.ddpc_status
        df["power_kw"] = electrical_power(self.q_hvac, self.q_fw) / 1e3
        return df

    def step_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(s) for s in self.steps],
                            columns=["t", "u_star", "t_rule", "t_opt0", "eps_max", "objective", "status", "solve_ms", "kkt"])


def run_from_frame(df: pd.DataFrame, mode: str = "unknown") -> RunLog:
    """Rebuild a run from the per-``dt`` table written by :meth:`RunLog.frame`."""
    decks = ("up", "mid", "low")
    try:
        out = RunLog(
            mode=mode,
            t=df["t"].to_numpy(float),
            t_ref=df["t_ref"].to_numpy(float),
            t_rule=df["t_rule"].to_numpy(float),
            t_room=df[[f"t_room_{d}" for d in decks]].to_numpy(float),
            q_hvac=df[[f"q_hvac_{d}" for d in decks]].to_numpy(float),
            q_fw=df[[f"q_fw_{d}" for d in decks]].to_numpy(float),
            disturbances=df[["t_amb", "q_gt", "q_gs", "occupancy", "speed"]].to_numpy(float),
            hvac_state=df["hvac_state"].to_numpy(int),
            ddpc_status=df["ddpc_status"].astype(str).to_numpy(object),
        )
    except KeyError as exc:
        raise ValidationError(f"run table lacks column {exc}") from exc
    out.energy_kwh = energy_account(out)
    return out


def read_run(path) -> RunLog:
    path = Path(path)
    mode = path.stem.removeprefix("run_")
    return run_from_frame(pd.read_csv(path, float_precision="round_trip"), mode)


def electrical_power(q_hvac: np.ndarray, q_fw: np.ndarray, cop: float = 3.0, eta_heat: float = 1.0) -> np.ndarray:
    """Surrogate electrical power in W summed over decks."""
    if not cop > 0 or not eta_heat > 0:
        raise ValidationError("cop and eta_heat must be positive")
    q_hvac = np.atleast_2d(q_hvac)
    q_fw = np.atleast_2d(q_fw)
    heat = (np.maximum(q_hvac, 0.0) + q_fw) / eta_heat
    cool = np.maximum(-q_hvac, 0.0) / cop
    return (heat + cool).sum(axis=1)


def energy_account(log_: RunLog, cop: float = 3.0, eta_heat: float = 1.0,
                   start: float | None = None, end: float | None = None) -> float:
    """Trapezoid integral of surrogate electrical power in kWh over ``[start, end]``."""
    power = electrical_power(log_.q_hvac, log_.q_fw, cop, eta_heat)
    mask = np.ones(log_.t.size, dtype=bool)
    if start is not None:
        mask &= log_.t >= start - 1e-9
    if end is not None:
        mask &= log_.t <= end + 1e-9
    if mask.sum() < 2:
        return 0.0
    return float(np.trapezoid(power[mask], log_.t[mask]) / 3.6e6)


def run_closed_loop(cfg: ScenarioConfig, mode: str, model: PredictorModel | None = None) -> RunLog:
    """Simulate coach and HVAC stack for ``cfg.duration`` with the given setpoint source.

    ``deactivated`` applies the rule-based setpoint; ``activated`` asks the
    predictive controller every control period.  Noise only affects the
    temperatures handed to the predictive controller.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if mode == "activated" and model is None:
        raise ValidationError("activated mode needs a predictor model")
    p = cfg.params
    sched = cfg.schedule
    c = cfg.ddpc
    stride = int(round(cfg.control_period / cfg.dt))
    n_periods = int(round(cfg.duration / cfg.control_period))
    n = n_periods * stride + 1
    rng = np.random.default_rng(cfg.seed)

    def rule(t: float) -> float:
        return float(rule_based_setpoint(sched.sample(t).t_amb, p.hvac.rule_table))

    start_rule = rule(cfg.t0)
    temps = (cfg.initial or CoachState.uniform(start_rule)).as_vector()
    hvac = HvacController(p.hvac, HvacMode.REGULAR)
    controller = DdpcController(model, c) if mode == "activated" else None

    t_arr = cfg.t0 + cfg.dt * np.arange(n)
    t_ref = np.empty(n)
    t_rule = np.empty(n)
    t_room = np.empty((n, 3))
    q_hvac = np.zeros((n, 3))
    q_fw = np.zeros((n, 3))
    dist = np.empty((n, 5))
    states = np.empty(n, dtype=int)
    status = np.empty(n, dtype=object)
    t_opt_trace = np.full(n_periods, np.nan)
    drive_cache: dict = {}

    u = start_rule
    row_status = "rule"
    k_dt = 0
    for k in range(n_periods):
        t = cfg.t0 + k * cfg.control_period
        rules_f = np.array([rule(t + j * cfg.control_period) for j in range(c.horizon + 1)])
        if controller is None:
            u = rules_f[0]
            row_status = "rule"
        else:
            y_meas = temps[ROOM] + cfg.noise_std * rng.standard_normal(3)
            d_now = sched.predictor_vector(t)
            if c.forecast == "perfect":
                d_f = np.concatenate([sched.predictor_vector(t + j * cfg.control_period) for j in range(1, c.horizon + 1)])
            else:
                d_f = np.tile(d_now, c.horizon)
            if controller.warmed_up:
                # the simulation's own node temperatures play the role of the observer state
                t_opt_f = compute_t_opt(CoachState.from_vector(temps), sched, t, rules_f, c, p.thermal,
                                        cfg.control_period, cfg.dt)
            else:
                t_opt_f = rules_f.copy()
            t_opt_trace[k] = t_opt_f[0]
            try:
                u = controller.step(t, y_meas, d_now, d_f, rules_f, t_opt_f)
            except Exception as exc:
                raise type(exc)(f"ddpc at t={t:.0f} s: {exc}") from exc
            row_status = controller.records[-1].status
        for m in range(stride):
            tn = t + m * cfg.dt
            row = sched.index(tn)
            d = sched.sample(tn)
            t_ref[k_dt], t_rule[k_dt], t_room[k_dt] = u, rules_f[0], temps[ROOM]
            dist[k_dt] = sched.predictor_vector(tn)
            status[k_dt] = row_status
            qh, qf, vent = hvac.update(u, temps[ROOM], d.t_amb, d.occupancy_pct, cfg.dt)
            q_hvac[k_dt], q_fw[k_dt] = qh, qf
            states[k_dt] = STATE_CODES[hvac.state]
            key = (row, vent)
            drv = drive_cache.get(key)
            if drv is None:
                drv = drive_cache[key] = _drive(d, p.thermal, vent)
            try:
                temps = rk4_vector(temps, distribute_heat(np.concatenate([qh, qf]), p.distribution), drv, cfg.dt, p.thermal)
            except IntegrationError as exc:
                raise IntegrationError(f"coach_sim at t={tn:.0f} s: {exc}") from exc
            k_dt += 1
    # final sample: state at the end, inputs held
    t_end = t_arr[-1]
    t_ref[-1], t_rule[-1], t_room[-1] = u, rule(t_end), temps[ROOM]
    dist[-1] = sched.predictor_vector(t_end)
    q_hvac[-1], q_fw[-1], states[-1], status[-1] = q_hvac[-2], q_fw[-2], states[-2], status[-2]
    out = RunLog(mode=mode, t=t_arr, t_ref=t_ref, t_rule=t_rule, t_room=t_room, q_hvac=q_hvac, q_fw=q_fw,
                 disturbances=dist, hvac_state=states, ddpc_status=status,
                 steps=list(controller.records) if controller else [], t_opt=t_opt_trace)
    out.energy_kwh = energy_account(out)
    return out


def hourly_violation(log_: RunLog, t_max: float, start: float, end: float | None = None) -> float:
    """Deck-averaged time integral of band excess in K*h, divided by the window length in hours."""
    end = log_.t[-1] if end is None else end
    mask = (log_.t >= start - 1e-9) & (log_.t <= end + 1e-9)
    if mask.sum() < 2:
        raise ValidationError("violation window holds fewer than two samples")
    excess = np.maximum(0.0, np.abs(log_.t_room[mask] - log_.t_rule[mask, None]) - t_max).mean(axis=1)
    hours = (log_.t[mask][-1] - log_.t[mask][0]) / 3600.0
    return float(np.trapezoid(excess, log_.t[mask]) / 3600.0 / hours)


@dataclass(frozen=True)
class Comparison:
    energy_a_kwh: float
    energy_b_kwh: float
    savings_pct: float
    violation_a: float
    violation_b: float
    buckets: pd.DataFrame
    steady_start: float

    def summary(self) -> dict:
        return {
            "energy_a_kwh": self.energy_a_kwh, "energy_b_kwh": self.energy_b_kwh,
            "savings_pct": self.savings_pct, "violation_a_k": self.violation_a,
            "violation_b_k": self.violation_b, "steady_start_s": self.steady_start,
        }


def savings_pct(energy_a: float, energy_b: float) -> float:
    """Relative saving of run a against baseline b, in percent."""
    if energy_b == 0:
        return 0.0 if energy_a == 0 else -math.inf
    return 100.0 * (energy_b - energy_a) / energy_b


def compare(log_a: RunLog, log_b: RunLog, steady_start: float, t_max: float = 2.0,
            bucket: float = 1800.0, cop: float = 3.0, eta_heat: float = 1.0) -> Comparison:
    """Savings of run ``a`` over baseline ``b`` and comfort violations, from ``steady_start`` on."""
    if log_a.t.shape != log_b.t.shape or not np.array_equal(log_a.t, log_b.t):
        raise ValidationError("runs are on different time grids")
    end = float(log_a.t[-1])
    e_a = energy_account(log_a, cop, eta_heat, steady_start, end)
    e_b = energy_account(log_b, cop, eta_heat, steady_start, end)
    rows = []
    edges = np.arange(steady_start, end, bucket)
    for lo in edges:
        hi = min(lo + bucket, end)
        ea = energy_account(log_a, cop, eta_heat, lo, hi)
        eb = energy_account(log_b, cop, eta_heat, lo, hi)
        rows.append({"start_s": lo, "end_s": hi, "energy_a_kwh": ea, "energy_b_kwh": eb,
                     "savings_pct": savings_pct(ea, eb)})
    return Comparison(
        energy_a_kwh=e_a, energy_b_kwh=e_b, savings_pct=savings_pct(e_a, e_b),
        violation_a=hourly_violation(log_a, t_max, steady_start, end),
        violation_b=hourly_violation(log_b, t_max, steady_start, end),
        buckets=pd.DataFrame(rows, columns=["start_s", "end_s", "energy_a_kwh", "energy_b_kwh", "savings_pct"]),
        steady_start=steady_start,
    )


def with_ddpc(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(cfg, ddpc=replace(cfg.ddpc, **changes))


__all__ = [
    "Comparison", "RunLog", "ScenarioConfig", "StepRecord", "compare", "electrical_power", "energy_account",
    "hourly_violation", "read_run", "run_closed_loop", "run_from_frame", "savings_pct", "with_ddpc",
]
