"""Lumped thermal model of one half of a double-deck coach.

Nine temperature nodes (room air, inventory and chassis for the upper, middle
and lower level) exchange heat by convection and conduction, receive HVAC and
floor/wall heating through a heat-distribution matrix, and are driven by
ambient, solar, ground, occupancy and door disturbances.  Integration is
fixed-step RK4 with inputs held constant over a step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import IntegrationError, ValidationError

DECKS = ("up", "mid", "low")
PARTS = ("room", "inv", "chassis")
NODES = tuple(f"{p}_{d}" for p in PARTS for d in DECKS)
NODE_INDEX = {name: i for i, name in enumerate(NODES)}

ROOM = slice(0, 3)
INV = slice(3, 6)
CHASSIS = slice(6, 9)
CHASSIS_UP, CHASSIS_LOW = NODE_INDEX["chassis_up"], NODE_INDEX["chassis_low"]
ROOM_LOW = NODE_INDEX["room_low"]

SANITY_BAND = (-60.0, 100.0)
KELVIN = 273.15

SCHEDULE_COLUMNS = (
    "time_s", "t_amb_c", "q_g_wm2", "alpha_rad", "beta_rad", "theta_rad",
    "occupancy_pct", "speed_ms", "door_open",
)


def _pair(key: str) -> tuple[int, int]:
    a, b = key.split("-")
    try:
        return NODE_INDEX[a.strip()], NODE_INDEX[b.strip()]
    except KeyError as exc:
        raise ValidationError(f"unknown node in exchange key {key!r}") from exc


@dataclass(frozen=True)
class CoachState:
    """Room, inventory and chassis temperatures in degC, ordered (up, mid, low).

    For the chassis the three entries are the upper chassis (roof), the middle
    floor between the decks, and the lower chassis.
    """

    t_room: np.ndarray
    t_inv: np.ndarray
    t_chassis: np.ndarray

    def __post_init__(self):
        for name in ("t_room", "t_inv", "t_chassis"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(3).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.as_vector())):
            raise ValidationError("coach state contains non-finite temperatures")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t_room, self.t_inv, self.t_chassis])

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "CoachState":
        x = np.asarray(x, dtype=float)
        return cls(x[ROOM], x[INV], x[CHASSIS])

    @classmethod
    def uniform(cls, temperature: float) -> "CoachState":
        return cls.from_vector(np.full(9, float(temperature)))


@dataclass(frozen=True)
class ThermalParams:
    """Physical coefficients of the coach model.

    ``mass`` and ``heat_capacity`` are keyed by node name (``room_up`` ...).
    Exchange coefficients are keyed by ``"<node>-<node>"`` pairs.  External
    convection acts on the nodes named in ``ext_conv_base`` and grows
    affinely with train speed.
    """

    mass: Mapping[str, float]
    heat_capacity: Mapping[str, float]
    conv_coeff: Mapping[str, float]
    cond_coeff: Mapping[str, float]
    ext_conv_base: Mapping[str, float]
    ext_conv_speed_gain: Mapping[str, float]
    window_gain_top: float
    window_gain_side: float
    ground_emis_coeff: float
    door_coeff: float
    occupant_power: float = 100.0
    max_capacity: float = 120.0
    occupancy_split: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    track_temp_slope: float = 1.0
    track_temp_offset: float = 10.0
    ground_threshold: float = 20.0
    vent_coeff: float = 0.0

    _cap: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_i: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_j: np.ndarray = field(init=False, repr=False, compare=False)
    _edge_k: np.ndarray = field(init=False, repr=False, compare=False)
    _ext_idx: np.ndarray = field(init=False, repr=False, compare=False)
    _ext_base: np.ndarray = field(init=False, repr=False, compare=False)
    _ext_gain: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        missing = [n for n in NODES if n not in self.mass or n not in self.heat_capacity]
        if missing:
            raise ValidationError(f"mass/heat_capacity missing for nodes {missing}")
        cap = np.array([self.mass[n] * self.heat_capacity[n] for n in NODES], dtype=float)
        if np.any(np.array([self.mass[n] for n in NODES]) <= 0) or np.any(
            np.array([self.heat_capacity[n] for n in NODES]) <= 0
        ):
            raise ValidationError("masses and heat capacities must be strictly positive")

        pairs = [(*_pair(k), float(v)) for k, v in {**self.conv_coeff, **self.cond_coeff}.items()]
        scalars = [self.window_gain_top, self.window_gain_side, self.ground_emis_coeff,
                   self.door_coeff, self.occupant_power, self.max_capacity, self.vent_coeff]
        ext = [(NODE_INDEX[n], float(self.ext_conv_base[n]), float(self.ext_conv_speed_gain.get(n, 0.0)))
               for n in self.ext_conv_base]
        if len({e[0] for e in ext}) != len(ext):
            raise ValidationError("duplicate node in ext_conv_base")
        coeffs = [p[2] for p in pairs] + scalars + [e[1] for e in ext] + [e[2] for e in ext]
        if any(c < 0 or not np.isfinite(c) for c in coeffs):
            raise ValidationError("exchange coefficients must be finite and nonnegative")
        split = np.asarray(self.occupancy_split, dtype=float)
        if split.shape != (3,) or np.any(split < 0) or abs(split.sum() - 1.0) > 1e-9:
            raise ValidationError("occupancy_split must be three nonnegative fractions summing to 1")

        object.__setattr__(self, "_cap", cap)
        object.__setattr__(self, "_edge_i", np.array([p[0] for p in pairs], dtype=int))
        object.__setattr__(self, "_edge_j", np.array([p[1] for p in pairs], dtype=int))
        object.__setattr__(self, "_edge_k", np.array([p[2] for p in pairs], dtype=float))
        object.__setattr__(self, "_ext_idx", np.array([e[0] for e in ext], dtype=int))
        object.__setattr__(self, "_ext_base", np.array([e[1] for e in ext], dtype=float))
        object.__setattr__(self, "_ext_gain", np.array([e[2] for e in ext], dtype=float))

    @property
    def capacitance(self) -> np.ndarray:
        """Per-node m*c in J/K."""
        return self._cap.copy()

    def replace(self, **changes) -> "ThermalParams":
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__ if not f.startswith("_")}
        kwargs.update(changes)
        return ThermalParams(**kwargs)


@dataclass(frozen=True)
class HeatDistribution:
    """Column-stochastic map from the six input channels to the six actuated nodes.

    Input order: hvac up/mid/low, floor-wall up/mid/low.  Output order: room
    up/mid/low, chassis up/mid/low.
    """

    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.shape != (6, 6):
            raise ValidationError(f"heat distribution must be 6x6, got {lam.shape}")
        if np.any(lam < 0) or np.any(lam > 1):
            raise ValidationError("heat distribution entries must lie in [0, 1]")
        if np.any(np.abs(lam.sum(axis=0) - 1.0) > 1e-12):
            raise ValidationError("every heat distribution column must sum to 1")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def identity(cls) -> "HeatDistribution":
        return cls(np.eye(6))


@dataclass(frozen=True)
class DisturbanceSample:
    t_amb: float
    q_g: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    theta: float = 0.0
    occupancy_pct: float = 0.0
    speed: float = 0.0
    door_open: bool = False

    def __post_init__(self):
        if self.q_g < 0:
            raise ValidationError("global irradiation must be nonnegative")
        if not 0.0 <= self.occupancy_pct <= 1.0:
            raise ValidationError("occupancy must be a fraction in [0, 1]")
        if self.speed < 0:
            raise ValidationError("speed must be nonnegative")

    def predictor_vector(self) -> np.ndarray:
        """The 5-vector (t_amb, q_gt, q_gs, occupancy, speed) used by the predictor."""
        q_gt, q_gs = solar_components(self.q_g, self.alpha, self.beta, self.theta)
        return np.array([self.t_amb, q_gt, q_gs, self.occupancy_pct, self.speed])


def solar_components(q_g, alpha, beta, theta):
    """Top and side projections of global irradiation, both nonnegative."""
    q_gt = np.abs(q_g * np.cos(alpha))
    q_gs = np.abs(q_g * np.sin(alpha) * np.sin(beta - theta))
    return q_gt, q_gs


def track_temperature(t_amb: float, params: ThermalParams) -> float:
    return params.track_temp_slope * t_amb + params.track_temp_offset


def ground_radiation(t_amb: float, t_chassis_low: float, params: ThermalParams) -> float:
    """Radiative gain of the lower chassis from the sun-heated track, W."""
    if t_amb <= params.ground_threshold:
        return 0.0
    t_g = track_temperature(t_amb, params) + KELVIN
    t_c = t_chassis_low + KELVIN
    return params.ground_emis_coeff * (t_g**4 - t_c**4)


def occupancy_heat(occupancy_pct: float, params: ThermalParams) -> np.ndarray:
    if not 0.0 <= occupancy_pct <= 1.0:
        raise ValidationError(f"occupancy {occupancy_pct} outside [0, 1]")
    passengers = round(occupancy_pct * params.max_capacity)
    return passengers * params.occupant_power * np.asarray(params.occupancy_split, dtype=float)


def door_exchange(t_amb: float, t_room_low: float, door_open: bool, params: ThermalParams) -> float:
    if not door_open:
        return 0.0
    return params.door_coeff * (t_amb - t_room_low)


def distribute_heat(q_in: Sequence[float], dist: HeatDistribution) -> np.ndarray:
    q_in = np.asarray(q_in, dtype=float)
    if q_in.shape != (6,):
        raise ValidationError(f"q_in must have 6 entries, got {q_in.shape}")
    return dist.lam @ q_in


def exchange_flows(temps: np.ndarray, params: ThermalParams) -> np.ndarray:
    """Pairwise convection/conduction ledger.

    Row ``e`` holds the heat received by the two nodes of edge ``e``; the
    second column is the exact negation of the first.
    """
    q = params._edge_k * (temps[params._edge_j] - temps[params._edge_i])
    return np.column_stack([q, -q])


@dataclass(frozen=True)
class _Drive:
    """Disturbance terms frozen over one integration step."""

    t_amb: float
    ext_k: np.ndarray
    room_gain: np.ndarray
    top_gain: float
    door_k: float
    vent_k: float
    ground_on: bool
    t_ground4: float


def _drive(d: DisturbanceSample, params: ThermalParams, vent_fraction: float) -> _Drive:
    q_gt, q_gs = solar_components(d.q_g, d.alpha, d.beta, d.theta)
    room_gain = q_gs * params.window_gain_side + occupancy_heat(d.occupancy_pct, params)
    ground_on = d.t_amb > params.ground_threshold
    t_g = track_temperature(d.t_amb, params) + KELVIN
    return _Drive(
        t_amb=float(d.t_amb),
        ext_k=params._ext_base + params._ext_gain * d.speed,
        room_gain=room_gain,
        top_gain=float(q_gt * params.window_gain_top),
        door_k=params.door_coeff if d.door_open else 0.0,
        vent_k=float(vent_fraction) * params.vent_coeff,
        ground_on=bool(ground_on),
        t_ground4=t_g**4,
    )


def _net_heat(temps: np.ndarray, q_act: np.ndarray, drv: _Drive, params: ThermalParams) -> np.ndarray:
    ledger = exchange_flows(temps, params)
    net = np.bincount(params._edge_i, weights=ledger[:, 0], minlength=9)
    net += np.bincount(params._edge_j, weights=ledger[:, 1], minlength=9)
    net[ROOM] += q_act[:3] + drv.room_gain + drv.vent_k * (drv.t_amb - temps[ROOM])
    net[CHASSIS] += q_act[3:]
    net[params._ext_idx] += drv.ext_k * (drv.t_amb - temps[params._ext_idx])
    net[CHASSIS_UP] += drv.top_gain
    net[ROOM_LOW] += drv.door_k * (drv.t_amb - temps[ROOM_LOW])
    if drv.ground_on:
        net[CHASSIS_LOW] += params.ground_emis_coeff * (drv.t_ground4 - (temps[CHASSIS_LOW] + KELVIN) ** 4)
    return net


def state_derivative(
    state: CoachState,
    q_act: Sequence[float],
    d: DisturbanceSample,
    params: ThermalParams,
    vent_fraction: float = 0.0,
) -> np.ndarray:
    """dT/dt in K/s for the nine nodes, in ``NODES`` order."""
    q_act = np.asarray(q_act, dtype=float)
    return _net_heat(state.as_vector(), q_act, _drive(d, params, vent_fraction), params) / params._cap


def _check_band(temps: np.ndarray) -> None:
    lo, hi = SANITY_BAND
    bad = np.flatnonzero(~((temps >= lo) & (temps <= hi)))
    if bad.size:
        i = int(bad[0])
        raise IntegrationError(f"node {NODES[i]} left the sanity band: {temps[i]:.3f} degC")


def rk4_vector(temps: np.ndarray, q_act: np.ndarray, drv: _Drive, dt: float, params: ThermalParams) -> np.ndarray:
    inv_cap = 1.0 / params._cap
    k1 = _net_heat(temps, q_act, drv, params) * inv_cap
    k2 = _net_heat(temps + 0.5 * dt * k1, q_act, drv, params) * inv_cap
    k3 = _net_heat(temps + 0.5 * dt * k2, q_act, drv, params) * inv_cap
    k4 = _net_heat(temps + dt * k3, q_act, drv, params) * inv_cap
    out = temps + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    _check_band(out)
    return out


def step(
    state: CoachState,
    q_in: Sequence[float],
    d: DisturbanceSample,
    dt: float,
    params: ThermalParams,
    dist: HeatDistribution,
    vent_fraction: float = 0.0,
) -> CoachState:
    """Advance the coach by ``dt`` seconds with zero-order-held inputs."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    q_act = distribute_heat(q_in, dist)
    drv = _drive(d, params, vent_fraction)
    return CoachState.from_vector(rk4_vector(state.as_vector(), q_act, drv, dt, params))


class DisturbanceSchedule:
    """Piecewise-constant disturbance time series (zero-order hold between rows)."""

    def __init__(self, time_s, t_amb, q_g, alpha, beta, theta, occupancy_pct, speed, door_open):
        self.time_s = np.asarray(time_s, dtype=float)
        if self.time_s.ndim != 1 or self.time_s.size == 0:
            raise ValidationError("schedule needs at least one row")
        if np.any(np.diff(self.time_s) <= 0):
            raise ValidationError("schedule times must be strictly increasing")
        n = self.time_s.size
        cols = dict(t_amb=t_amb, q_g=q_g, alpha=alpha, beta=beta, theta=theta,
                    occupancy_pct=occupancy_pct, speed=speed)
        for name, val in cols.items():
            arr = np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()
            setattr(self, name, arr)
        self.door_open = np.broadcast_to(np.asarray(door_open, dtype=bool), (n,)).copy()
        if np.any(self.q_g < 0) or np.any(self.speed < 0):
            raise ValidationError("irradiation and speed must be nonnegative")
        if np.any((self.occupancy_pct < 0) | (self.occupancy_pct > 1)):
            raise ValidationError("occupancy must lie in [0, 1]")
        self.q_gt, self.q_gs = solar_components(self.q_g, self.alpha, self.beta, self.theta)

    def __len__(self) -> int:
        return self.time_s.size

    @property
    def end(self) -> float:
        return float(self.time_s[-1])

    def index(self, t: float) -> int:
        i = int(np.searchsorted(self.time_s, t, side="right")) - 1
        if i < 0:
            raise ValidationError(f"time {t} precedes the schedule start {self.time_s[0]}")
        return i

    def sample(self, t: float) -> DisturbanceSample:
        i = self.index(t)
        return DisturbanceSample(
            t_amb=float(self.t_amb[i]), q_g=float(self.q_g[i]), alpha=float(self.alpha[i]),
            beta=float(self.beta[i]), theta=float(self.theta[i]),
            occupancy_pct=float(self.occupancy_pct[i]), speed=float(self.speed[i]),
            door_open=bool(self.door_open[i]),
        )

    def predictor_vector(self, t: float) -> np.ndarray:
        i = self.index(t)
        return np.array([self.t_amb[i], self.q_gt[i], self.q_gs[i], self.occupancy_pct[i], self.speed[i]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SCHEDULE_COLUMNS)
            for i in range(len(self)):
                w.writerow([
                    repr(float(self.time_s[i])), repr(float(self.t_amb[i])), repr(float(self.q_g[i])),
                    repr(float(self.alpha[i])), repr(float(self.beta[i])), repr(float(self.theta[i])),
                    repr(float(self.occupancy_pct[i])), repr(float(self.speed[i])), int(self.door_open[i]),
                ])

    @classmethod
    def from_csv(cls, path) -> "DisturbanceSchedule":
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != SCHEDULE_COLUMNS:
                raise ValidationError(f"schedule header must be {','.join(SCHEDULE_COLUMNS)}")
            rows = list(reader)
        col = lambda k: [float(r[k]) for r in rows]  # noqa: E731
        return cls(
            col("time_s"), col("t_amb_c"), col("q_g_wm2"), col("alpha_rad"), col("beta_rad"),
            col("theta_rad"), col("occupancy_pct"), col("speed_ms"),
            [r["door_open"].strip() == "1" for r in rows],
        )


def simulate_open_loop(
    state: CoachState,
    schedule: DisturbanceSchedule,
    t0: float,
    duration: float,
    dt: float,
    params: ThermalParams,
    sample_every: float,
) -> np.ndarray:
    """Free-floating run with all heat inputs at zero.

    Returns node temperatures at ``t0, t0 + sample_every, ...`` up to
    ``t0 + duration`` inclusive, shape (n_samples, 9).
    """
    n_steps = int(round(duration / dt))
    stride = int(round(sample_every / dt))
    if stride * dt != sample_every and not np.isclose(stride * dt, sample_every):
        raise ValidationError("sample period must be a multiple of dt")
    zeros = np.zeros(6)
    temps = state.as_vector()
    out = [temps]
    drv, last_row = None, -1
    for n in range(n_steps):
        t = t0 + n * dt
        row = schedule.index(t)
        if row != last_row:
            drv = _drive(schedule.sample(t), params, 0.0)
            last_row = row
        temps = rk4_vector(temps, zeros, drv, dt, params)
        if (n + 1) % stride == 0:
            out.append(temps)
    return np.array(out)
