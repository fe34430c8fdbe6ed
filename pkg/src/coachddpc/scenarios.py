"""Synthetic disturbance days, excitation runs for training data, and raw-record synthesis.

All weather here is SYNTHETIC: smooth diurnal ambient curves and a clear-sky
style irradiation bump, chosen to exercise heating, cooling and the
heating-to-cooling swing around midday.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .config import SystemParams
from .data import EARTH_RADIUS_M, RawRecordSet, Trajectory, headings
from .errors import ValidationError
from .hvac import HvacController, HvacMode, rule_based_setpoint
from .sim import ROOM, CoachState, DisturbanceSchedule, _drive, distribute_heat, rk4_vector

HOUR = 3600.0
DAY = 24 * HOUR


@dataclass(frozen=True)
class DayProfile:
    """Parameters of one synthetic day."""

    t_mean: float
    t_amplitude: float
    sun_peak: float = 0.0            # W/m^2 at solar noon
    elevation_peak: float = math.radians(40.0)
    heading: float = math.pi / 2     # rad, 0 = north
    sunrise_h: float = 6.5
    sunset_h: float = 18.5
    service_start_h: float | None = None
    service_end_h: float | None = None
    occupancy: float = 0.0
    speed: float = 0.0
    door_every_min: float | None = None
    peak_hour: float = 15.0


def _sun(profile: DayProfile, hour: np.ndarray):
    span = profile.sunset_h - profile.sunrise_h
    phase = (hour - profile.sunrise_h) / span
    up = (phase > 0) & (phase < 1)
    shape = np.where(up, np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
    q_g = profile.sun_peak * shape
    alpha = profile.elevation_peak * shape
    beta = np.pi / 2 + np.pi * np.clip(phase, 0, 1)  # east through south to west
    return q_g, alpha, beta


def day_schedule(profile: DayProfile, duration: float = DAY, step: float = 60.0, t0: float = 0.0,
                 start_hour: float = 0.0) -> DisturbanceSchedule:
    """Piecewise-constant schedule sampled every ``step`` seconds."""
    if duration <= 0 or step <= 0:
        raise ValidationError("duration and step must be positive")
    t = t0 + np.arange(0.0, duration + step / 2, step)
    hour = (start_hour + (t - t0) / HOUR) % 24.0
    t_amb = profile.t_mean + profile.t_amplitude * np.cos(2 * np.pi * (hour - profile.peak_hour) / 24.0)
    q_g, alpha, beta = _sun(profile, hour)
    if profile.service_start_h is None:
        service = np.zeros(t.size, dtype=bool)
    else:
        service = (hour >= profile.service_start_h) & (hour < profile.service_end_h)
    occ = np.where(service, profile.occupancy, 0.0)
    speed = np.where(service, profile.speed, 0.0)
    door = np.zeros(t.size, dtype=bool)
    if profile.door_every_min:
        minute = np.floor((t - t0) / 60.0)
        door = service & (minute % profile.door_every_min == 0)
        speed = np.where(door, 0.0, speed)
    return DisturbanceSchedule(t, t_amb, q_g, alpha, beta, profile.heading, occ, speed, door)


MARCH = DayProfile(t_mean=7.0, t_amplitude=7.0, sun_peak=750.0, heading=math.pi / 2,
                   service_start_h=6.0, service_end_h=22.0, occupancy=0.15, speed=30.0, door_every_min=20)
HOT = DayProfile(t_mean=28.0, t_amplitude=6.0, sun_peak=800.0, elevation_peak=math.radians(60.0), heading=0.0)
COLD = DayProfile(t_mean=-5.0, t_amplitude=4.0, sun_peak=150.0, elevation_peak=math.radians(20.0), heading=math.pi / 2,
                  sunrise_h=7.5, sunset_h=17.0)

SCENARIOS = {"march": MARCH, "hot": HOT, "cold": COLD}


def scenario_schedule(name: str, duration: float = DAY, margin: float = 2 * HOUR) -> DisturbanceSchedule:
    """Named scenario with ``margin`` extra seconds so forecasts never run off the end."""
    try:
        profile = SCENARIOS[name]
    except KeyError:
        raise ValidationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return day_schedule(profile, duration + margin)


def random_profile(rng: np.random.Generator) -> DayProfile:
    moving = rng.random() < 0.6
    return DayProfile(
        t_mean=float(rng.uniform(-8.0, 30.0)),
        t_amplitude=float(rng.uniform(2.0, 8.0)),
        sun_peak=float(rng.uniform(0.0, 800.0)),
        elevation_peak=float(np.radians(rng.uniform(15.0, 65.0))),
        heading=float(rng.uniform(0.0, 2 * np.pi)),
        service_start_h=6.0 if moving else None,
        service_end_h=22.0 if moving else None,
        occupancy=float(rng.uniform(0.0, 0.6)) if moving else 0.0,
        speed=float(rng.uniform(15.0, 40.0)) if moving else 0.0,
        door_every_min=float(rng.choice([15, 20, 30])) if moving else None,
        peak_hour=float(rng.uniform(13.0, 16.0)),
    )


def excitation_offsets(n_periods: int, period: float, rng: np.random.Generator, amplitude: float = 2.0,
                       hold_min: float = 30 * 60, hold_max: float = 90 * 60) -> np.ndarray:
    """Piecewise-constant random offsets, each held for a random 30-90 min."""
    out = np.empty(n_periods)
    k = 0
    while k < n_periods:
        hold = int(round(rng.uniform(hold_min, hold_max) / period))
        out[k : k + max(hold, 1)] = rng.uniform(-amplitude, amplitude)
        k += max(hold, 1)
    return out


def simulate_setpoints(
    params: SystemParams,
    schedule: DisturbanceSchedule,
    setpoint_fn,
    duration: float,
    period: float = 300.0,
    dt: float = 10.0,
    initial: CoachState | None = None,
    t0: float = 0.0,
):
    """Run coach plus HVAC stack with a setpoint chosen once per period.

    ``setpoint_fn(k, t, t_rule)`` returns the setpoint for period ``k``.
    Returns per-period samples taken at the start of each period:
    ``(t, u, y, d)`` with ``y`` the room temperatures.
    """
    stride = int(round(period / dt))
    if not math.isclose(stride * dt, period):
        raise ValidationError("period must be a multiple of dt")
    n_periods = int(round(duration / period))
    state = initial or CoachState.uniform(float(rule_based_setpoint(schedule.sample(t0).t_amb, params.hvac.rule_table)))
    temps = state.as_vector()
    hvac = HvacController(params.hvac, HvacMode.REGULAR)
    ts, us, ys, ds = [], [], [], []
    for k in range(n_periods):
        t = t0 + k * period
        d = schedule.sample(t)
        t_rule = float(rule_based_setpoint(d.t_amb, params.hvac.rule_table))
        u = float(setpoint_fn(k, t, t_rule))
        ts.append(t)
        us.append(u)
        ys.append(temps[ROOM].copy())
        ds.append(schedule.predictor_vector(t))
        for n in range(stride):
            tn = t + n * dt
            dn = schedule.sample(tn)
            q_hvac, q_fw, vent = hvac.update(u, temps[ROOM], dn.t_amb, dn.occupancy_pct, dt)
            q_act = distribute_heat(np.concatenate([q_hvac, q_fw]), params.distribution)
            temps = rk4_vector(temps, q_act, _drive(dn, params.thermal, vent), dt, params.thermal)
    return np.array(ts), np.array(us), np.array(ys), np.array(ds)


def training_trajectories(
    params: SystemParams,
    n_days: int,
    seed: int,
    period: float = 300.0,
    dt: float = 10.0,
    noise_std: float = 0.05,
    prefix: str = "day",
) -> list[Trajectory]:
    """Excited closed-loop days on random weather, one trajectory per day.

    The setpoint is the rule value plus random offsets in +-2 K held 30-90
    min; room temperatures carry Gaussian measurement noise.
    """
    rng = np.random.default_rng(seed)
    out = []
    n_periods = int(round(DAY / period))
    for i in range(n_days):
        schedule = day_schedule(random_profile(rng), DAY + period)
        offsets = excitation_offsets(n_periods, period, rng)
        t, u, y, d = simulate_setpoints(params, schedule, lambda k, _t, rule: rule + offsets[k], DAY, period, dt)
        y = y + noise_std * rng.standard_normal(y.shape)
        out.append(Trajectory(id=f"{prefix}{i:03d}", sample_period=period, t=t, u=u, y=y, d=d))
    return out


def synth_raw_records(
    traj: Trajectory,
    schedule: DisturbanceSchedule,
    start: str = "2024-03-01T00:00:00Z",
    origin: tuple[float, float] = (46.95, 7.44),
    trip_breaks: list[tuple[float, float]] | None = None,
) -> RawRecordSet:
    """Raw HVAC, weather and trip tables that the pipeline maps back onto ``traj``.

    The train moves along the schedule's heading at a constant 20 m/s in the
    synthetic track, so the heading recomputed from positions equals the
    scheduled one.  Weather rows carry the same timestamps as the HVAC rows.
    """
    base = pd.Timestamp(start)
    times = base + pd.to_timedelta(traj.t, unit="s")
    hv = pd.DataFrame({
        "timestamp": times,
        "mode": "regular",
        "t_ref_c": traj.u,
        "t_room_up_c": traj.y[:, 0],
        "t_room_mid_c": traj.y[:, 1],
        "t_room_low_c": traj.y[:, 2],
        "speed_ms": traj.d[:, 4],
    })
    idx = [schedule.index(t) for t in traj.t]
    theta = schedule.theta[idx]
    step_m = 20.0 * np.diff(traj.t, prepend=traj.t[0] - (traj.t[1] - traj.t[0]))
    north = np.cumsum(step_m * np.cos(theta))
    east = np.cumsum(step_m * np.sin(theta))
    lat = origin[0] + np.degrees(north / EARTH_RADIUS_M)
    lon = origin[1] + np.degrees(east / (EARTH_RADIUS_M * np.cos(np.radians(lat))))
    we = pd.DataFrame({
        "timestamp": times,
        "lat_deg": lat,
        "lon_deg": lon,
        "t_amb_c": traj.d[:, 0],
        "q_g_wm2": schedule.q_g[idx],
        "alpha_rad": schedule.alpha[idx],
        "beta_rad": schedule.beta[idx],
    })
    occ = traj.d[:, 3]
    trips = []
    k = 0
    n = len(traj)
    while k < n:
        j = k
        while j + 1 < n and occ[j + 1] == occ[k]:
            j += 1
        end = times[j + 1] if j + 1 < n else times[j] + pd.Timedelta(seconds=traj.sample_period)
        if occ[k] > 0:
            trips.append({"start": times[k], "end": end, "occupancy_pct": occ[k]})
        k = j + 1
    trip_frame = pd.DataFrame(trips, columns=["start", "end", "occupancy_pct"])
    return RawRecordSet(hv, we, trip_frame)


def recomputed_side_irradiation(raw: RawRecordSet) -> np.ndarray:
    """Side irradiation implied by the raw weather table's own positions."""
    theta = headings(raw.weather[["lat_deg", "lon_deg"]].to_numpy())
    return np.abs(raw.weather["q_g_wm2"].to_numpy() * np.sin(raw.weather["alpha_rad"].to_numpy())
                  * np.sin(raw.weather["beta_rad"].to_numpy() - theta))
