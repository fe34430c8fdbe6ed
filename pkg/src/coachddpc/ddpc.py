"""Receding-horizon setpoint controller built on the identified predictor.

Every control period the controller

1. simulates the coach with all HVAC heat inputs off and projects the
   deck-average temperature onto the comfort band to get the target ``t_opt``;
2. builds a convex QP over the setpoints ``u(0..T)`` and comfort slacks
   ``eps(1..T)`` after substituting the predictor for the future outputs;
3. applies ``u*(0)``.
"""
from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import N_D, N_Y, N_Z
from .errors import ValidationError
from .predictor import PredictorModel
from .qp import KktResiduals, QpStatus, solve_qp
from .sim import ROOM, CoachState, DisturbanceSchedule, ThermalParams, simulate_open_loop

log = logging.getLogger(__name__)

LOG_COLUMNS = ("t", "u_star", "t_rule", "t_opt0", "eps_max", "objective", "status", "solve_ms")


@dataclass(frozen=True)
class DdpcConfig:
    """Comfort band, setpoint limits and cost weights of the setpoint QP.

    ``t_max_inner`` (when set) replaces ``t_max`` in the ``t_opt``
    projection only, giving a more conservative target inside the band.
    """

    rho: int = 12
    horizon: int = 6
    t_max: float = 2.0
    t_max_inner: float | None = None
    setpoint_band: float = 2.0
    delta_t_max: float = 0.3
    sigma: float = 1.0
    tau: float = 100.0
    gamma: float = 10.0
    per_deck_slack: bool = False
    forecast: str = "perfect"

    def __post_init__(self):
        if self.rho < 1 or self.horizon < 1:
            raise ValidationError("rho and horizon must be >= 1")
        if not self.t_max > 0:
            raise ValidationError("t_max must be positive")
        if not self.delta_t_max > 0:
            raise ValidationError("delta_t_max must be positive")
        if self.setpoint_band < 0:
            raise ValidationError("setpoint_band must be nonnegative")
        if self.sigma < 0 or self.gamma < 0:
            raise ValidationError("cost weights must be nonnegative")
        if not self.tau > 0:
            raise ValidationError("tau must be positive so comfort slacks are penalized")
        if self.t_max_inner is not None and not 0 < self.t_max_inner <= self.t_max:
            raise ValidationError("t_max_inner must lie in (0, t_max]")
        if self.forecast not in ("perfect", "persistence"):
            raise ValidationError("forecast must be 'perfect' or 'persistence'")

    @classmethod
    def from_dict(cls, doc: dict) -> "DdpcConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown ddpc keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_t_opt(
    state: CoachState,
    schedule: DisturbanceSchedule,
    t0: float,
    t_rule_f: np.ndarray,
    config: DdpcConfig,
    params: ThermalParams,
    period: float = 300.0,
    dt: float = 10.0,
) -> np.ndarray:
    """Free-floating deck-average temperature at ``t0 + k*period``, clipped to the band around ``t_rule``."""
    t_rule_f = np.asarray(t_rule_f, dtype=float)
    if t_rule_f.size != config.horizon + 1:
        raise ValidationError(f"t_rule_f needs {config.horizon + 1} entries")
    traj = simulate_open_loop(state, schedule, t0, config.horizon * period, dt, params, period)
    avg = traj[:, ROOM].mean(axis=1)
    half = config.t_max if config.t_max_inner is None else config.t_max_inner
    return np.clip(avg, t_rule_f - half, t_rule_f + half)


def steady_state_estimate(t_room, t_amb: float) -> CoachState:
    """Field fallback when only room temperatures are measured."""
    t_room = np.asarray(t_room, dtype=float)
    chassis = 0.5 * (t_room.mean() + t_amb)
    return CoachState(t_room=t_room, t_inv=t_room.copy(), t_chassis=np.full(3, chassis))


def jy_decomposition(y_f, t_opt_f) -> tuple[float, float]:
    """Split ``sum_k ||y(k) - t_opt(k) 1||^2`` into average tracking and inter-deck spread."""
    y = np.asarray(y_f, dtype=float).reshape(-1, N_Y)
    t_opt = np.asarray(t_opt_f, dtype=float).reshape(-1)
    if y.shape[0] != t_opt.size:
        raise ValidationError("y_f and t_opt_f cover different horizons")
    avg = y.mean(axis=1)
    return float(N_Y * np.sum((avg - t_opt) ** 2)), float(np.sum((y - avg[:, None]) ** 2))


@dataclass(frozen=True)
class OcpInstance:
    """One setpoint QP in the form ``min 1/2 x'Px + q'x + constant  s.t.  Gx <= h``.

    ``x = [u(0..T), eps]`` and the predicted outputs are ``y_f = offset + y_gain @ u``.
    """

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    constant: float
    offset: np.ndarray
    y_gain: np.ndarray
    z_p: np.ndarray
    d_f: np.ndarray
    t_rule_f: np.ndarray
    t_opt_f: np.ndarray
    u_prev: float
    y_now: np.ndarray
    config: DdpcConfig
    regularized: bool = False

    @property
    def n_u(self) -> int:
        return self.config.horizon + 1

    def setpoint_box(self) -> tuple[float, float]:
        """Interval for ``u(0)`` allowed by the setpoint band and the rate limit."""
        c = self.config
        lo = max(self.t_rule_f[0] - c.setpoint_band, self.u_prev - c.delta_t_max)
        hi = min(self.t_rule_f[0] + c.setpoint_band, self.u_prev + c.delta_t_max)
        return lo, hi


@dataclass(frozen=True)
class OcpSolution:
    u_star: np.ndarray
    y_star: np.ndarray
    eps_star: np.ndarray
    objective: float
    status: QpStatus
    residuals: KktResiduals
    solve_ms: float = 0.0


def current_input_index(rho: int) -> int:
    """Position of ``u(0|t)`` inside the past window ``z_p``."""
    return N_Z * (rho - 1) + N_Y


def assemble_qp(
    model: PredictorModel,
    z_p: np.ndarray,
    d_f: np.ndarray,
    t_rule_f: np.ndarray,
    t_opt_f: np.ndarray,
    u_prev: float,
    config: DdpcConfig,
) -> OcpInstance:
    """Build the setpoint QP.

    ``z_p`` is the past window whose last slice holds the current measured
    output and disturbance; its current-input entry is ignored because
    ``u(0|t)`` is a decision variable.
    """
    T, rho = config.horizon, config.rho
    if (model.rho, model.horizon) != (rho, T):
        raise ValidationError(f"model has (rho, T) = ({model.rho}, {model.horizon}), config wants ({rho}, {T})")
    z_p = np.asarray(z_p, dtype=float).copy()
    d_f = np.asarray(d_f, dtype=float)
    t_rule_f = np.asarray(t_rule_f, dtype=float)
    t_opt_f = np.asarray(t_opt_f, dtype=float)
    if z_p.size != N_Z * rho:
        raise ValidationError(f"history window has {z_p.size} entries, expected {N_Z * rho}")
    if d_f.size != N_D * T:
        raise ValidationError(f"d_f has {d_f.size} entries, expected {N_D * T}")
    if t_rule_f.size != T + 1 or t_opt_f.size != T + 1:
        raise ValidationError(f"t_rule_f and t_opt_f need {T + 1} entries")
    iu = current_input_index(rho)
    z_p[iu] = 0.0
    if not (np.all(np.isfinite(z_p)) and np.all(np.isfinite(d_f))):
        raise ValidationError("history or forecast contains missing values")
    y_now = z_p[N_Z * (rho - 1) : N_Z * (rho - 1) + N_Y].copy()
    offset = model.H_p @ z_p + model.H_d @ d_f
    y_gain = np.column_stack([model.H_p[:, iu], model.H_u])  # (3T, T+1)

    n_u = T + 1
    n_eps = N_Y * T if config.per_deck_slack else T
    n = n_u + n_eps
    target = np.repeat(t_opt_f[1:], N_Y)

    P = np.zeros((n, n))
    q = np.zeros(n)
    # output tracking
    P[:n_u, :n_u] += 2.0 * y_gain.T @ y_gain
    q[:n_u] += 2.0 * y_gain.T @ (offset - target)
    constant = float(np.sum((offset - target) ** 2) + np.sum((y_now - t_opt_f[0]) ** 2))
    # setpoint close to target
    P[:n_u, :n_u] += 2.0 * config.sigma * np.eye(n_u)
    q[:n_u] -= 2.0 * config.sigma * t_opt_f
    constant += config.sigma * float(t_opt_f @ t_opt_f)
    # slacks
    P[n_u:, n_u:] += 2.0 * config.tau * np.eye(n_eps)
    # setpoint rate
    D = np.eye(n_u) - np.eye(n_u, k=-1)
    b = np.zeros(n_u)
    b[0] = u_prev
    P[:n_u, :n_u] += 2.0 * config.gamma * D.T @ D
    q[:n_u] -= 2.0 * config.gamma * D.T @ b
    constant += config.gamma * u_prev**2

    regularized = False
    if np.linalg.eigvalsh(P).min() <= 1e-12 * max(1.0, np.abs(P).max()):
        P += 1e-9 * np.eye(n)
        regularized = True

    rows, rhs = [], []
    # comfort band on predicted outputs, softened by the slacks
    slack_of_row = np.arange(N_Y * T) if config.per_deck_slack else np.repeat(np.arange(T), N_Y)
    band_rule = np.repeat(t_rule_f[1:], N_Y)
    E = np.zeros((N_Y * T, n_eps))
    E[np.arange(N_Y * T), slack_of_row] = -1.0
    rows += [np.hstack([y_gain, E]), np.hstack([-y_gain, E])]
    rhs += [config.t_max + band_rule - offset, config.t_max - band_rule + offset]
    # slack nonnegativity
    rows.append(np.hstack([np.zeros((n_eps, n_u)), -np.eye(n_eps)]))
    rhs.append(np.zeros(n_eps))
    # setpoint band around the rule value, including the applied u(0)
    I_u = np.hstack([np.eye(n_u), np.zeros((n_u, n_eps))])
    rows += [I_u, -I_u]
    rhs += [t_rule_f + config.setpoint_band, config.setpoint_band - t_rule_f]
    # rate limit, first row against the previously applied setpoint
    D_x = np.hstack([D, np.zeros((n_u, n_eps))])
    rate = np.full(n_u, config.delta_t_max)
    rows += [D_x, -D_x]
    rhs += [rate + b, rate - b]

    return OcpInstance(
        P=P, q=q, G=np.vstack(rows), h=np.concatenate(rhs), constant=constant, offset=offset,
        y_gain=y_gain, z_p=z_p, d_f=d_f, t_rule_f=t_rule_f, t_opt_f=t_opt_f, u_prev=float(u_prev),
        y_now=y_now, config=config, regularized=regularized,
    )


def solve_ocp(inst: OcpInstance) -> OcpSolution:
    start = time.perf_counter()
    res = solve_qp(inst.P, inst.q, inst.G, inst.h)
    elapsed = 1e3 * (time.perf_counter() - start)
    n_u = inst.n_u
    u = res.x[:n_u].copy()
    eps = np.maximum(res.x[n_u:], 0.0)
    return OcpSolution(
        u_star=u, y_star=inst.offset + inst.y_gain @ u, eps_star=eps,
        objective=res.objective + inst.constant, status=res.status, residuals=res.residuals, solve_ms=elapsed,
    )


def objective_terms(inst: OcpInstance, u: np.ndarray, eps: np.ndarray) -> dict[str, float]:
    """Cost components evaluated directly from their definitions."""
    y = np.vstack([inst.y_now, (inst.offset + inst.y_gain @ u).reshape(-1, N_Y)])
    j_y = float(np.sum((y - inst.t_opt_f[:, None]) ** 2))
    j_u = float(np.sum((u - inst.t_opt_f) ** 2))
    j_eps = float(np.sum(np.asarray(eps) ** 2))
    j_du = float((u[0] - inst.u_prev) ** 2 + np.sum(np.diff(u) ** 2))
    c = inst.config
    return {"J_y": j_y, "J_u": j_u, "J_eps": j_eps, "J_du": j_du,
            "J": j_y + c.sigma * j_u + c.tau * j_eps + c.gamma * j_du}


@dataclass
class StepRecord:
    t: float
    u_star: float
    t_rule: float
    t_opt0: float
    eps_max: float
    objective: float
    status: str
    solve_ms: float
    kkt: float = math.nan


@dataclass
class DdpcController:
    """Stateful wrapper: keeps the (y, u, d) history and produces one setpoint per call."""

    model: PredictorModel
    config: DdpcConfig
    history: deque = field(default=None)
    records: list = field(default_factory=list)
    last_solution: OcpSolution | None = None

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.config.rho - 1 if self.config.rho > 1 else 0)
        self._u_prev: float | None = None

    @property
    def warmed_up(self) -> bool:
        return len(self.history) >= self.config.rho - 1 and self._u_prev is not None

    def past_window(self, y_now, d_now) -> np.ndarray:
        slices = [np.asarray(s) for s in self.history]
        current = np.concatenate([np.asarray(y_now, float), [np.nan], np.asarray(d_now, float)])
        return np.concatenate(slices + [current])

    def step(self, t: float, y_now, d_now, d_f, t_rule_f, t_opt_f) -> float:
        """Setpoint for the coming period; passes ``t_rule`` through until the history is full."""
        t_rule_f = np.asarray(t_rule_f, dtype=float)
        t_opt_f = np.asarray(t_opt_f, dtype=float)
        if not self.warmed_up:
            u = float(t_rule_f[0])
            self.records.append(StepRecord(t, u, u, float(t_opt_f[0]), 0.0, math.nan, "warmup", 0.0))
        else:
            inst = assemble_qp(self.model, self.past_window(y_now, d_now), d_f, t_rule_f, t_opt_f,
                               self._u_prev, self.config)
            sol = solve_ocp(inst)
            self.last_solution = sol
            lo, hi = inst.setpoint_box()
            if sol.status == QpStatus.OPTIMAL:
                u = float(sol.u_star[0])
            else:
                log.warning("t=%.0f: QP status %s, holding previous setpoint", t, sol.status.value)
                u = self._u_prev
            if lo <= hi:
                u = float(min(max(u, lo), hi))
            else:
                u = float(np.clip(u, t_rule_f[0] - self.config.setpoint_band, t_rule_f[0] + self.config.setpoint_band))
            self.records.append(StepRecord(
                t, u, float(t_rule_f[0]), float(t_opt_f[0]), float(sol.eps_star.max(initial=0.0)),
                sol.objective, sol.status.value, sol.solve_ms, sol.residuals.worst,
            ))
        self.history.append(np.concatenate([np.asarray(y_now, float), [u], np.asarray(d_now, float)]))
        self._u_prev = u
        return u
