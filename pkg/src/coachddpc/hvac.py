"""Legacy control stack: rule-based setpoint, HVAC state machine, deck PIDs, floor/wall heating."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError


class HvacMode(enum.Enum):
    REGULAR = "regular"
    SLUMBER = "slumber"
    OFF = "off"


class HvacState(enum.Enum):
    PREHEATING = "preheating"
    PRECOOLING = "precooling"
    HEATING = "heating"
    COOLING = "cooling"
    MIXED = "mixed"
    ACTIVE_HEATING = "active_heating"
    ACTIVE_VENTILATION = "active_ventilation"
    ACTIVE_COOLING = "active_cooling"
    OFF_STATE = "off_state"


ADMISSIBLE = {
    HvacMode.REGULAR: frozenset({HvacState.PREHEATING, HvacState.PRECOOLING, HvacState.HEATING,
                                 HvacState.COOLING, HvacState.MIXED}),
    HvacMode.SLUMBER: frozenset({HvacState.ACTIVE_HEATING, HvacState.ACTIVE_VENTILATION,
                                 HvacState.ACTIVE_COOLING, HvacState.OFF_STATE}),
    HvacMode.OFF: frozenset({HvacState.OFF_STATE}),
}

HEATING_ONLY = frozenset({HvacState.PREHEATING, HvacState.HEATING, HvacState.ACTIVE_HEATING})
COOLING_ONLY = frozenset({HvacState.PRECOOLING, HvacState.COOLING, HvacState.ACTIVE_COOLING})
NO_OUTPUT = frozenset({HvacState.ACTIVE_VENTILATION, HvacState.OFF_STATE})

STATE_CODES = {s: i for i, s in enumerate(HvacState)}


@dataclass(frozen=True)
class HvacSubstate:
    """Air source: ``outside_fraction`` 0 is fully circulated air, 1 fully outside air."""

    kind: str
    outside_fraction: float

    def __post_init__(self):
        if self.kind not in ("circulated", "outside", "mixed"):
            raise ValidationError(f"unknown substate {self.kind!r}")
        if not 0.0 <= self.outside_fraction <= 1.0:
            raise ValidationError("outside-air fraction must lie in [0, 1]")

    @classmethod
    def circulated(cls) -> "HvacSubstate":
        return cls("circulated", 0.0)

    @classmethod
    def outside(cls) -> "HvacSubstate":
        return cls("outside", 1.0)

    @classmethod
    def mixed(cls, fraction: float) -> "HvacSubstate":
        if fraction <= 0.0:
            return cls.circulated()
        if fraction >= 1.0:
            return cls.outside()
        return cls("mixed", float(fraction))


@dataclass(frozen=True)
class RuleTable:
    """Piecewise-linear T_amb -> T_rule map, clamped outside the knots."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.breakpoints)
        if not pts:
            raise ConfigurationError("rule table is empty")
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        if np.any(np.diff(xs) <= 0):
            raise ConfigurationError("rule table ambient knots must be strictly increasing")
        if np.any(np.diff(ys) < 0):
            raise ConfigurationError("rule table temperatures must be non-decreasing")
        object.__setattr__(self, "breakpoints", pts)

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.breakpoints])

    @property
    def ys(self) -> np.ndarray:
        return np.array([p[1] for p in self.breakpoints])


DEFAULT_RULE_TABLE = RuleTable(((-20.0, 20.0), (5.0, 21.0), (15.0, 22.0), (25.0, 24.0), (35.0, 26.0)))


def rule_based_setpoint(t_amb, table: RuleTable = DEFAULT_RULE_TABLE):
    """Rule temperature for the given ambient temperature (scalar or array)."""
    if not table.breakpoints:
        raise ConfigurationError("rule table is empty")
    out = np.interp(t_amb, table.xs, table.ys)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class StateThresholds:
    pre_band: float = 3.0
    hysteresis: float = 0.5
    mixed_band: float = 1.0
    slumber_band: float = 5.0
    ventilation_band: float = 1.0


def hvac_state_update(
    mode: HvacMode,
    state: HvacState,
    t_room: Sequence[float],
    t_ref: float,
    t_amb: float,
    thresholds: StateThresholds = StateThresholds(),
) -> HvacState:
    """Next HVAC state.

    In regular mode the mean error ``t_ref - mean(t_room)`` selects
    pre-heating/pre-cooling beyond ``pre_band``, the mixed state when the decks
    disagree in sign by more than ``mixed_band``, and otherwise heating or
    cooling with a ``hysteresis`` dead band around the current choice.
    """
    t_room = np.asarray(t_room, dtype=float)
    err = t_ref - t_room
    mean_err = float(err.mean())
    th = thresholds

    if mode is HvacMode.OFF:
        return HvacState.OFF_STATE

    if mode is HvacMode.SLUMBER:
        if mean_err > th.slumber_band:
            return HvacState.ACTIVE_HEATING
        if mean_err < -th.slumber_band:
            return HvacState.ACTIVE_COOLING
        if mean_err < -th.ventilation_band and t_amb < t_room.mean():
            return HvacState.ACTIVE_VENTILATION
        return HvacState.OFF_STATE

    if mean_err > th.pre_band:
        return HvacState.PREHEATING
    if mean_err < -th.pre_band:
        return HvacState.PRECOOLING
    if err.max() > th.mixed_band and err.min() < -th.mixed_band:
        return HvacState.MIXED
    if state is HvacState.HEATING:
        return HvacState.COOLING if mean_err < -th.hysteresis else HvacState.HEATING
    if state is HvacState.COOLING:
        return HvacState.HEATING if mean_err > th.hysteresis else HvacState.COOLING
    return HvacState.HEATING if mean_err >= 0 else HvacState.COOLING


@dataclass(frozen=True)
class SubstateRule:
    """Outside-air fraction ramps linearly from 0 at ``occ_low`` to 1 at ``occ_high`` occupancy."""

    occ_low: float = 0.1
    occ_high: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.occ_low < self.occ_high <= 1.0:
            raise ConfigurationError("substate occupancy knots must satisfy 0 <= low < high <= 1")


def hvac_substate_update(
    state: HvacState,
    t_room: Sequence[float],
    t_amb: float,
    occupancy_pct: float,
    rule: SubstateRule = SubstateRule(),
) -> HvacSubstate:
    if state is HvacState.OFF_STATE:
        return HvacSubstate.circulated()
    if state is HvacState.ACTIVE_VENTILATION:
        return HvacSubstate.outside()
    frac = (occupancy_pct - rule.occ_low) / (rule.occ_high - rule.occ_low)
    return HvacSubstate.mixed(float(np.clip(frac, 0.0, 1.0)))


def _deck(value) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (3,)).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PidGains:
    """Per-deck PID gains and actuator limits (arrays ordered up, mid, low).

    ``q_min`` (cooling capacity, <= 0) and ``q_max`` (heating capacity, >= 0)
    are the widest limits; the HVAC state narrows them.  ``aw_gain`` is the
    back-calculation gain in K/W and defaults to ``1/kp``.
    """

    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    rate_limit: np.ndarray
    aw_gain: np.ndarray | None = None

    def __post_init__(self):
        for name in ("kp", "ki", "kd", "q_min", "q_max", "rate_limit"):
            object.__setattr__(self, name, _deck(getattr(self, name)))
        if self.aw_gain is None:
            with np.errstate(divide="ignore"):
                aw = np.where(self.kp > 0, 1.0 / np.where(self.kp > 0, self.kp, 1.0), 0.0)
        else:
            aw = self.aw_gain
        object.__setattr__(self, "aw_gain", _deck(aw))
        if np.any(self.q_min > 0) or np.any(self.q_max < 0):
            raise ValidationError("PID limits must satisfy q_min <= 0 <= q_max")
        if np.any(self.rate_limit <= 0):
            raise ValidationError("PID rate limit must be positive")

    def limits(self, state: HvacState) -> tuple[np.ndarray, np.ndarray]:
        zero = np.zeros(3)
        if state in NO_OUTPUT:
            return zero, zero
        if state in HEATING_ONLY:
            return zero, self.q_max.copy()
        if state in COOLING_ONLY:
            return self.q_min.copy(), zero
        return self.q_min.copy(), self.q_max.copy()


@dataclass(frozen=True)
class PidMemory:
    integrator: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_output: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("integrator", "prev_error", "prev_output"):
            object.__setattr__(self, name, _deck(getattr(self, name)))
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("integrator", "prev_error", "prev_output")):
            raise ValidationError("PID memory must be finite")


def pid_step(
    gains: PidGains,
    mem: PidMemory,
    t_ref: float,
    t_room: Sequence[float],
    dt: float,
    limits_ctx: HvacState,
) -> tuple[np.ndarray, PidMemory]:
    """One sample of the three deck PIDs.

    Saturation to the state-dependent limits comes first, then the rate
    limit around the previous output; the integrator is corrected by
    back-calculation on the gap between applied and unsaturated output.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    err = t_ref - np.asarray(t_room, dtype=float)
    deriv = (err - mem.prev_error) / dt
    raw = gains.kp * err + gains.ki * mem.integrator + gains.kd * deriv
    lo, hi = gains.limits(limits_ctx)
    out = np.clip(raw, lo, hi)
    step_max = gains.rate_limit * dt
    out = np.clip(out, mem.prev_output - step_max, mem.prev_output + step_max)
    out = np.clip(out, lo, hi)
    integ = mem.integrator + dt * (err + gains.aw_gain * (out - raw))
    return out, PidMemory(integ, err, out)


@dataclass(frozen=True)
class FloorWallTable:
    """Floor/wall heating: per-deck maxima and a non-increasing T_amb -> fraction table."""

    maxima: np.ndarray
    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "maxima", _deck(self.maxima))
        pts = tuple((float(x), float(f)) for x, f in self.breakpoints)
        xs = np.array([p[0] for p in pts])
        fs = np.array([p[1] for p in pts])
        if not pts or np.any(np.diff(xs) <= 0) or np.any(np.diff(fs) > 0):
            raise ConfigurationError("floor/wall table must have increasing ambient knots and non-increasing values")
        if np.any(fs < 0) or np.any(fs > 1) or np.any(self.maxima < 0):
            raise ConfigurationError("floor/wall fractions must lie in [0, 1] and maxima be nonnegative")
        object.__setattr__(self, "breakpoints", pts)


def floor_wall_heating(state: HvacState, t_amb: float, fw_table: FloorWallTable) -> np.ndarray:
    if state is HvacState.PREHEATING:
        return fw_table.maxima.copy()
    if state is HvacState.HEATING:
        xs = [p[0] for p in fw_table.breakpoints]
        fs = [p[1] for p in fw_table.breakpoints]
        return float(np.interp(t_amb, xs, fs)) * fw_table.maxima
    return np.zeros(3)


@dataclass(frozen=True)
class HvacParams:
    rule_table: RuleTable
    thresholds: StateThresholds
    substate: SubstateRule
    pid: PidGains
    floor_wall: FloorWallTable


class HvacController:
    """Stateful wrapper running the HVAC state machine, PIDs and floor/wall heating.

    The PID memory is reset whenever the state machine changes state.
    """

    def __init__(self, params: HvacParams, mode: HvacMode = HvacMode.REGULAR,
                 state: HvacState = HvacState.HEATING):
        if state not in ADMISSIBLE[mode]:
            state = next(iter(sorted(ADMISSIBLE[mode], key=lambda s: s.value)))
        self.params = params
        self.mode = mode
        self.state = state
        self.memory = PidMemory()
        self.substate = HvacSubstate.circulated()

    def update(self, t_ref: float, t_room, t_amb: float, occupancy_pct: float, dt: float):
        p = self.params
        new_state = hvac_state_update(self.mode, self.state, t_room, t_ref, t_amb, p.thresholds)
        if new_state is not self.state:
            self.memory = PidMemory()
            self.state = new_state
        self.substate = hvac_substate_update(self.state, t_room, t_amb, occupancy_pct, p.substate)
        q_hvac, self.memory = pid_step(p.pid, self.memory, t_ref, t_room, dt, self.state)
        q_fw = floor_wall_heating(self.state, t_amb, p.floor_wall)
        return q_hvac, q_fw, self.substate.outside_fraction


__all__ = [
    "ADMISSIBLE", "DEFAULT_RULE_TABLE", "FloorWallTable", "HvacController", "HvacMode", "HvacParams",
    "HvacState", "HvacSubstate", "PidGains", "PidMemory", "RuleTable", "StateThresholds", "SubstateRule",
    "floor_wall_heating", "hvac_state_update", "hvac_substate_update", "pid_step", "rule_based_setpoint",
]
