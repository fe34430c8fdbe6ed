"""Raw-record ingestion: fusion, resampling, segmentation, down-sampling and Hankel matrices.

Raw inputs are three CSV streams (HVAC, weather, trips) with ISO-8601 UTC
timestamps.  The output is a list of gap-free, uniformly sampled
:class:`Trajectory` objects in Regular mode, and from them the extended
Hankel matrices used to identify the predictor.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import PipelineError, ValidationError
from .sim import solar_components

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
HVAC_COLUMNS = ("timestamp", "mode", "t_ref_c", "t_room_up_c", "t_room_mid_c", "t_room_low_c", "speed_ms")
WEATHER_COLUMNS = ("timestamp", "lat_deg", "lon_deg", "t_amb_c", "q_g_wm2", "alpha_rad", "beta_rad")
TRIP_COLUMNS = ("start", "end", "occupancy_pct")
TRAJECTORY_COLUMNS = ("t", "u", "y1", "y2", "y3", "d1", "d2", "d3", "d4", "d5")
N_Y, N_U, N_D = 3, 1, 5
N_Z = N_Y + N_U + N_D


@dataclass
class RawRecordSet:
    """The three raw sources as data frames with parsed UTC timestamps."""

    hvac: pd.DataFrame
    weather: pd.DataFrame
    trips: pd.DataFrame

    def __post_init__(self):
        self.hvac = _check_frame(self.hvac, HVAC_COLUMNS, "timestamp", "hvac")
        self.weather = _check_frame(self.weather, WEATHER_COLUMNS, "timestamp", "weather")
        trips = self.trips.copy()
        missing = set(TRIP_COLUMNS) - set(trips.columns)
        if missing:
            raise ValidationError(f"trips: missing columns {sorted(missing)}")
        trips["start"] = pd.to_datetime(trips["start"], utc=True)
        trips["end"] = pd.to_datetime(trips["end"], utc=True)
        if (trips["end"] <= trips["start"]).any():
            raise ValidationError("trips: every trip must end after it starts")
        self.trips = trips.sort_values("start").reset_index(drop=True)

    @classmethod
    def from_dir(cls, path: str | Path) -> "RawRecordSet":
        path = Path(path)
        return cls(
            pd.read_csv(path / "hvac.csv", float_precision="round_trip"),
            pd.read_csv(path / "weather.csv", float_precision="round_trip"),
            pd.read_csv(path / "trips.csv", float_precision="round_trip"),
        )

    def to_dir(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        iso = lambda s: s.dt.strftime("%Y-%m-%dT%H:%M:%SZ")  # noqa: E731
        hv = self.hvac.copy()
        hv["timestamp"] = iso(hv["timestamp"])
        hv.to_csv(path / "hvac.csv", index=False, float_format="%.17g")
        we = self.weather.copy()
        we["timestamp"] = iso(we["timestamp"])
        we.to_csv(path / "weather.csv", index=False, float_format="%.17g")
        tr = self.trips.copy()
        tr["start"], tr["end"] = iso(tr["start"]), iso(tr["end"])
        tr.to_csv(path / "trips.csv", index=False, float_format="%.17g")


def _check_frame(df: pd.DataFrame, columns: Sequence[str], key: str, name: str) -> pd.DataFrame:
    missing = set(columns) - set(df.columns)
    if missing:
        raise ValidationError(f"{name}: missing columns {sorted(missing)}")
    df = df.loc[:, list(columns)].copy()
    df[key] = pd.to_datetime(df[key], utc=True)
    df = df.sort_values(key, kind="stable").reset_index(drop=True)
    if df[key].duplicated().any():
        raise ValidationError(f"{name}: duplicate timestamps")
    return df


@dataclass
class Trajectory:
    """Uniformly sampled, gap-free (u, y, d) record; ``t`` in seconds since epoch."""

    id: str
    sample_period: float
    u: np.ndarray
    y: np.ndarray
    d: np.ndarray
    t: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1, N_Y)
        self.d = np.asarray(self.d, dtype=float).reshape(-1, N_D)
        n = self.u.size
        if self.y.shape[0] != n or self.d.shape[0] != n:
            raise ValidationError(f"trajectory {self.id}: u, y, d lengths differ")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.d))):
            raise ValidationError(f"trajectory {self.id}: missing entries")
        if self.t is None:
            self.t = np.arange(n) * float(self.sample_period)
        self.t = np.asarray(self.t, dtype=float)

    def __len__(self) -> int:
        return self.u.size

    @property
    def z(self) -> np.ndarray:
        """Per-sample stacked (y, u, d), shape (n, 9)."""
        return np.column_stack([self.y, self.u, self.d])

    def to_csv(self, path: str | Path) -> None:
        frame = pd.DataFrame(np.column_stack([self.t, self.u, self.y, self.d]), columns=TRAJECTORY_COLUMNS)
        frame.to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path, traj_id: str | None = None) -> "Trajectory":
        frame = pd.read_csv(path, float_precision="round_trip")
        if tuple(frame.columns) != TRAJECTORY_COLUMNS:
            raise ValidationError(f"{path}: header must be {','.join(TRAJECTORY_COLUMNS)}")
        t = frame["t"].to_numpy(float)
        period = float(np.median(np.diff(t))) if t.size > 1 else 0.0
        return cls(
            id=traj_id or Path(path).stem, sample_period=period, t=t,
            u=frame["u"].to_numpy(float), y=frame[["y1", "y2", "y3"]].to_numpy(float),
            d=frame[["d1", "d2", "d3", "d4", "d5"]].to_numpy(float),
        )


def load_trajectories(directory: str | Path) -> list[Trajectory]:
    files = sorted(Path(directory).glob("traj_*.csv"))
    if not files:
        raise PipelineError(f"no traj_*.csv files in {directory}")
    return [Trajectory.from_csv(f) for f in files]


def save_trajectories(trajs: Iterable[Trajectory], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for tr in trajs:
        p = directory / f"traj_{tr.id}.csv"
        tr.to_csv(p)
        paths.append(p)
    return paths


def headings(lat_lon: Sequence[tuple[float, float]], min_displacement: float = 1.0) -> np.ndarray:
    """Per-point heading in rad (0 north, pi/2 east) from an equirectangular projection.

    Point ``k`` gets the bearing of the move from ``k-1`` to ``k``; the first
    point takes the first valid bearing.  Moves shorter than
    ``min_displacement`` metres carry the previous heading forward.
    """
    pts = np.asarray(lat_lon, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValidationError("heading needs at least two positions")
    lat = np.radians(pts[:, 0])
    lon = np.radians(pts[:, 1])
    north = EARTH_RADIUS_M * np.diff(lat)
    east = EARTH_RADIUS_M * np.diff(lon) * np.cos(0.5 * (lat[1:] + lat[:-1]))
    out = np.empty(pts.shape[0])
    current = math.nan
    for k in range(1, pts.shape[0]):
        if math.hypot(east[k - 1], north[k - 1]) >= min_displacement:
            current = math.atan2(east[k - 1], north[k - 1]) % (2 * math.pi)
        out[k] = current
    valid = np.flatnonzero(np.isfinite(out[1:]))
    fill = out[1 + valid[0]] if valid.size else 0.0
    out[0] = fill
    # leading stationary points inherit the first observed heading
    for k in range(1, pts.shape[0]):
        if not np.isfinite(out[k]):
            out[k] = fill
        else:
            break
    return out


def heading(lat_lon: Sequence[tuple[float, float]]) -> float:
    """Heading at the last position of an ordered track."""
    return float(headings(lat_lon)[-1])


def nominal_period(times: pd.Series) -> float:
    if len(times) < 2:
        return math.inf
    return float(np.median(np.diff(times.astype("int64").to_numpy()) / 1e9))


def fuse(raw: RawRecordSet, weather_period: float | None = None) -> pd.DataFrame:
    """One fused row per HVAC record.

    Weather joins most-recent-at-or-before, and is marked missing when older
    than twice its nominal period.  Occupancy joins by trip interval
    membership ``[start, end)`` and is 0 outside trips.
    """
    hv = raw.hvac
    we = raw.weather.copy()
    period = weather_period if weather_period is not None else nominal_period(we["timestamp"])
    if len(we) >= 2:
        we["theta"] = headings(we[["lat_deg", "lon_deg"]].to_numpy())
    else:
        we["theta"] = 0.0
    we["weather_time"] = we["timestamp"]
    merged = pd.merge_asof(hv, we.drop(columns=["lat_deg", "lon_deg"]), on="timestamp", direction="backward")
    age = (merged["timestamp"] - merged["weather_time"]).dt.total_seconds()
    missing = merged["weather_time"].isna() | (age > 2.0 * period)

    occ = np.zeros(len(merged))
    ts = merged["timestamp"].astype("int64").to_numpy()
    for start, end, pct in raw.trips[["start", "end", "occupancy_pct"]].itertuples(index=False):
        inside = (ts >= start.value) & (ts < end.value)
        occ[inside] = pct

    q_gt, q_gs = solar_components(merged["q_g_wm2"].to_numpy(float), merged["alpha_rad"].to_numpy(float),
                                  merged["beta_rad"].to_numpy(float), merged["theta"].to_numpy(float))
    fused = pd.DataFrame({
        "timestamp": merged["timestamp"],
        "mode": merged["mode"].astype(str).str.lower(),
        "u": merged["t_ref_c"].astype(float),
        "y1": merged["t_room_up_c"].astype(float),
        "y2": merged["t_room_mid_c"].astype(float),
        "y3": merged["t_room_low_c"].astype(float),
        "d1": merged["t_amb_c"].astype(float),
        "d2": q_gt,
        "d3": q_gs,
        "d4": occ,
        "d5": merged["speed_ms"].astype(float),
        "missing": missing.to_numpy(),
    })
    signal = ["u", "y1", "y2", "y3", "d1", "d2", "d3", "d4", "d5"]
    fused.loc[fused["missing"], signal] = np.nan
    fused["missing"] |= fused[signal].isna().any(axis=1)
    return fused


@dataclass
class UniformGrid:
    """Resampled stream: one row per period, ``gap`` marks unusable bins."""

    period: float
    t: np.ndarray
    values: np.ndarray
    mode: np.ndarray
    gap: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return self.t.size


def resample(fused: pd.DataFrame, period: float) -> UniformGrid:
    """Bin-mean aggregation onto a grid aligned to multiples of ``period``."""
    if not period > 0:
        raise ValidationError("period must be positive")
    if fused.empty:
        return UniformGrid(period, np.empty(0), np.empty((0, N_Z)), np.empty(0, dtype=object), np.empty(0, bool))
    secs = fused["timestamp"].astype("int64").to_numpy() / 1e9
    bins = np.floor(secs / period + 1e-9).astype(np.int64)
    first, last = bins.min(), bins.max()
    n = int(last - first + 1)
    cols = ["u", "y1", "y2", "y3", "d1", "d2", "d3", "d4", "d5"]
    frame = fused[cols].copy()
    frame["bin"] = bins - first
    frame["missing"] = fused["missing"].to_numpy()
    frame["mode"] = fused["mode"].to_numpy()
    grouped = frame.groupby("bin")
    means = grouped[cols].mean()
    any_missing = grouped["missing"].any()
    modes = grouped["mode"].agg(lambda m: m.iloc[0] if (m == m.iloc[0]).all() else "mixed")

    values = np.full((n, len(cols)), np.nan)
    values[means.index.to_numpy()] = means.to_numpy()
    mode = np.full(n, "none", dtype=object)
    mode[modes.index.to_numpy()] = modes.to_numpy()
    gap = np.ones(n, dtype=bool)
    gap[means.index.to_numpy()] = any_missing.to_numpy()
    gap |= ~np.all(np.isfinite(values), axis=1)
    # column order inside the grid follows z = (y, u, d)
    z_values = np.column_stack([values[:, 1:4], values[:, 0], values[:, 4:]])
    t = (first + np.arange(n)) * period
    return UniformGrid(period, t, z_values, mode, gap)


def segment_filter(grid: UniformGrid, min_length: int = 1, mode: str = "regular", prefix: str = "seg") -> list[Trajectory]:
    """Maximal gap-free runs in the requested mode, at least ``min_length`` long."""
    ok = ~grid.gap & (grid.mode == mode)
    out: list[Trajectory] = []
    n = len(grid)
    k = 0
    while k < n:
        if not ok[k]:
            k += 1
            continue
        start = k
        while k < n and ok[k]:
            k += 1
        if k - start >= min_length:
            z = grid.values[start:k]
            out.append(Trajectory(
                id=f"{prefix}{len(out):04d}", sample_period=grid.period, t=grid.t[start:k],
                y=z[:, :N_Y], u=z[:, N_Y], d=z[:, N_Y + N_U:],
            ))
    return out


def downsample(traj: Trajectory, factor: int) -> Trajectory:
    """Means over consecutive groups of ``factor`` samples; a trailing partial group is dropped."""
    if not isinstance(factor, (int, np.integer)) or factor <= 0:
        raise ValidationError("downsample factor must be a positive integer")
    m = len(traj) // factor
    cut = m * factor

    def bin_mean(a: np.ndarray) -> np.ndarray:
        return a[:cut].reshape(m, factor, *a.shape[1:]).mean(axis=1)

    return Trajectory(
        id=traj.id, sample_period=traj.sample_period * factor, t=traj.t[:cut:factor],
        u=bin_mean(traj.u), y=bin_mean(traj.y), d=bin_mean(traj.d),
    )


def summary_table(by_period: dict[float, list[Trajectory]]) -> pd.DataFrame:
    """Trajectory count (#T) and mean length (#D) per sampling period."""
    rows = []
    for period, trajs in sorted(by_period.items()):
        lengths = [len(t) for t in trajs]
        rows.append({
            "period_s": period,
            "n_trajectories": len(lengths),
            "mean_length": float(np.mean(lengths)) if lengths else 0.0,
        })
    return pd.DataFrame(rows)


def ingest(raw: RawRecordSet, period: float, min_length: int = 1,
           downsample_factors: Sequence[int] = ()) -> tuple[dict[float, list[Trajectory]], pd.DataFrame]:
    """Full pipeline: fuse, resample to ``period``, segment, then optional down-sampling."""
    grid = resample(fuse(raw), period)
    base = segment_filter(grid, min_length=min_length)
    out = {float(period): base}
    for f in downsample_factors:
        out[float(period * f)] = [ds for ds in (downsample(t, f) for t in base) if len(ds) >= min_length]
    return out, summary_table(out)


@dataclass
class HankelSet:
    """Extended Hankel matrices over all trajectories.

    ``Z`` stacks depth-(rho+T) windows of z = (y, u, d); ``Y`` stacks the
    future outputs.  ``column_ids`` records the source trajectory of each
    column.
    """

    Z: np.ndarray
    Y: np.ndarray
    rho: int
    horizon: int
    column_ids: np.ndarray
    n_skipped: int = 0

    @property
    def n_columns(self) -> int:
        return self.Z.shape[1]


def hankel_windows(traj: Trajectory, depth: int) -> np.ndarray:
    """Columns are consecutive depth-``depth`` windows of z, slice-major."""
    z = traj.z
    win = np.lib.stride_tricks.sliding_window_view(z, depth, axis=0)  # (n-depth+1, 9, depth)
    return np.ascontiguousarray(win.transpose(0, 2, 1).reshape(win.shape[0], depth * N_Z).T)


def build_hankel(trajs: Sequence[Trajectory], rho: int, horizon: int) -> HankelSet:
    if rho < 1 or horizon < 1:
        raise ValidationError("rho and horizon must be >= 1")
    periods = {round(t.sample_period, 9) for t in trajs}
    if len(periods) > 1:
        raise ValidationError(f"trajectories mix sample periods {sorted(periods)}")
    depth = rho + horizon
    blocks, ids, skipped = [], [], 0
    for tr in sorted(trajs, key=lambda t: t.id):
        if len(tr) < depth:
            skipped += 1
            continue
        w = hankel_windows(tr, depth)
        blocks.append(w)
        ids.extend([tr.id] * w.shape[1])
    if skipped:
        log.warning("skipped %d trajectories shorter than rho+T=%d", skipped, depth)
    if not blocks:
        raise PipelineError(f"no trajectory reaches rho+T={depth} samples")
    Z = np.hstack(blocks)
    y_rows = future_output_rows(rho, horizon)
    return HankelSet(Z=Z, Y=Z[y_rows], rho=rho, horizon=horizon, column_ids=np.array(ids), n_skipped=skipped)


def future_output_rows(rho: int, horizon: int) -> np.ndarray:
    """Row indices of Y_1..Y_T inside Z."""
    return np.concatenate([N_Z * (rho + j) + np.arange(N_Y) for j in range(horizon)])
