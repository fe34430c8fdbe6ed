"""Causal multistep linear predictor identified from Hankel data via an LQ factorization.

Rows of ``Z`` are grouped by time slice as (y, u, d).  The first ``rho``
slices are the past window ``z_p``; the remaining ``T`` slices hold the
future.  The predictor regresses each future output slice ``Y_j`` on every
row above it, which yields

    y_f = Phi_p z_p + Phi_y y_f + Phi_u u_f + Phi_d d_f

with strictly block-lower-triangular ``Phi_y``, ``Phi_u`` and ``Phi_d``.
Eliminating ``y_f`` on the right gives ``y_f = H [z_p; u_f; d_f]``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .data import N_D, N_U, N_Y, N_Z, HankelSet, Trajectory, build_hankel, future_output_rows
from .errors import PipelineError, ValidationError

MODEL_FORMAT = "coachddpc-predictor-v1"


def lq_decompose(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(L, Q)`` with ``Z = L Q``, ``L`` lower triangular with a nonnegative diagonal.

    Raises:
        ValidationError: if ``Z`` has fewer columns than rows.
    """
    Z = np.asarray(Z, dtype=float)
    rows, cols = Z.shape
    if cols < rows:
        raise ValidationError(f"LQ needs at least as many columns as rows (got {rows}x{cols})")
    q, r = linalg.qr(Z.T, mode="economic")
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return r.T * signs, q.T * signs[:, None]


def _lower_factor(Z: np.ndarray) -> np.ndarray:
    (r,) = linalg.qr(Z.T, mode="r", check_finite=False)
    r = r[: Z.shape[0]]
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return r.T * signs


@dataclass(frozen=True)
class PredictorModel:
    """Identified predictor; ``phi`` maps the full window, ``H`` maps (z_p, u_f, d_f)."""

    rho: int
    horizon: int
    phi: np.ndarray
    H: np.ndarray
    meta: dict = field(default_factory=dict)
    n_y: int = N_Y
    n_u: int = N_U
    n_d: int = N_D

    def __post_init__(self):
        T, rho = self.horizon, self.rho
        n_z = self.n_y + self.n_u + self.n_d
        if self.phi.shape != (self.n_y * T, n_z * (rho + T)):
            raise ValidationError(f"phi has shape {self.phi.shape}, expected {(self.n_y * T, n_z * (rho + T))}")
        if self.H.shape != (self.n_y * T, n_z * rho + (self.n_u + self.n_d) * T):
            raise ValidationError(f"H has shape {self.H.shape}")
        for a in (self.phi, self.H):
            a.setflags(write=False)

    @property
    def past_size(self) -> int:
        return (self.n_y + self.n_u + self.n_d) * self.rho

    @property
    def H_p(self) -> np.ndarray:
        return self.H[:, : self.past_size]

    @property
    def H_u(self) -> np.ndarray:
        p = self.past_size
        return self.H[:, p : p + self.n_u * self.horizon]

    @property
    def H_d(self) -> np.ndarray:
        return self.H[:, self.past_size + self.n_u * self.horizon :]

    def phi_blocks(self) -> dict[str, np.ndarray]:
        """Split ``phi`` into past, output, input and disturbance coefficients."""
        return _split_phi(self.phi, self.rho, self.horizon)


def _future_columns(rho: int, horizon: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    base = N_Z * rho + N_Z * np.arange(horizon)[:, None]
    y_cols = (base + np.arange(N_Y)).ravel()
    u_cols = (base + N_Y + np.arange(N_U)).ravel()
    d_cols = (base + N_Y + N_U + np.arange(N_D)).ravel()
    return y_cols, u_cols, d_cols


def _split_phi(phi: np.ndarray, rho: int, horizon: int) -> dict[str, np.ndarray]:
    y_cols, u_cols, d_cols = _future_columns(rho, horizon)
    return {"p": phi[:, : N_Z * rho], "y": phi[:, y_cols], "u": phi[:, u_cols], "d": phi[:, d_cols]}


def _causal_mask(rho: int, horizon: int, width: int, strict: bool = True) -> np.ndarray:
    """True where the coefficient of slice-``k`` regressor on output step ``i`` may be nonzero."""
    rows = np.repeat(np.arange(horizon), N_Y)
    cols = np.repeat(np.arange(horizon), width)
    return cols[None, :] < rows[:, None] if strict else cols[None, :] <= rows[:, None]


def _solve_phi_exact(L: np.ndarray, rho: int, horizon: int) -> np.ndarray:
    y_rows = future_output_rows(rho, horizon)
    L0 = L[y_rows].copy()
    for j in range(horizon):
        s = N_Z * (rho + j)
        L0[N_Y * j : N_Y * (j + 1), s : s + N_Y] = 0.0
    # phi L = L0  <=>  L^T phi^T = L0^T
    return linalg.solve_triangular(L.T, L0.T, lower=False, check_finite=False).T


def _solve_phi_ridge(L: np.ndarray, rho: int, horizon: int, lam: float, refine: int = 2) -> np.ndarray:
    """Per-block Tikhonov solve plus ``refine`` iterated-Tikhonov corrections.

    Each correction re-solves for the remaining residual, shrinking the bias
    on well-excited directions by ``lam / (sigma^2 + lam)`` while directions
    the data never excite stay close to zero.
    """
    y_rows = future_output_rows(rho, horizon)
    phi = np.zeros((N_Y * horizon, L.shape[0]))
    for j in range(horizon):
        s = N_Z * (rho + j)
        A = L[:s, :s]
        b = L[y_rows[N_Y * j : N_Y * (j + 1)], :s]
        factor = linalg.cho_factor(A @ A.T + lam * np.eye(s), check_finite=False)
        block = linalg.cho_solve(factor, A @ b.T, check_finite=False).T
        for _ in range(refine):
            block += linalg.cho_solve(factor, A @ (b - block @ A).T, check_finite=False).T
        phi[N_Y * j : N_Y * (j + 1), :s] = block
    return phi


def _enforce_causality(phi: np.ndarray, rho: int, horizon: int) -> None:
    for j in range(horizon):
        phi[N_Y * j : N_Y * (j + 1), N_Z * (rho + j) :] = 0.0


def compose_h(phi: np.ndarray, rho: int, horizon: int) -> np.ndarray:
    """``H = (I - Phi_y)^{-1} [Phi_p, Phi_u, Phi_d]`` with structural zeros written back."""
    blocks = _split_phi(phi, rho, horizon)
    rhs = np.hstack([blocks["p"], blocks["u"], blocks["d"]])
    M = np.eye(N_Y * horizon) - blocks["y"]
    H = linalg.solve_triangular(M, rhs, lower=True, unit_diagonal=True, check_finite=False)
    p = N_Z * rho
    H[:, p : p + N_U * horizon] *= _causal_mask(rho, horizon, N_U)
    H[:, p + N_U * horizon :] *= _causal_mask(rho, horizon, N_D)
    return H


def _row_scales(Z: np.ndarray, rho: int, horizon: int) -> np.ndarray:
    per_channel = Z.reshape(rho + horizon, N_Z, -1).transpose(1, 0, 2).reshape(N_Z, -1).std(axis=1)
    per_channel[per_channel == 0] = 1.0
    return np.tile(per_channel, rho + horizon)


def training_digest(Z: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(Z, dtype=float).tobytes()).hexdigest()


def fit(hankel: HankelSet, standardize: bool = False, rank_tol: float = 1e-10) -> PredictorModel:
    """Identify the predictor from ``hankel``.

    When the LQ factor has a diagonal entry below ``rank_tol * ||Z||`` the
    data do not excite every direction; each output block is then solved as a
    Tikhonov-regularized regression with ``lambda = 1e-8 ||Z||^2 / N``.
    """
    rho, T = hankel.rho, hankel.horizon
    Z = np.asarray(hankel.Z, dtype=float)
    rows, n_cols = Z.shape
    if rows != N_Z * (rho + T):
        raise ValidationError(f"Z has {rows} rows, expected {N_Z * (rho + T)}")
    if n_cols < rows:
        raise PipelineError(f"need at least {rows} Hankel columns, got {n_cols}; supply more data")
    scales = _row_scales(Z, rho, T) if standardize else np.ones(rows)
    Zs = Z / scales[:, None]
    L = _lower_factor(Zs)
    norm = np.linalg.norm(Zs)
    diag = np.abs(np.diag(L))
    singular = bool(np.any(diag < rank_tol * norm))
    lam = 0.0
    if singular:
        lam = float(1e-8 * norm**2 / n_cols)
        phi = _solve_phi_ridge(L, rho, T, lam)
    else:
        phi = _solve_phi_exact(L, rho, T)
    _enforce_causality(phi, rho, T)
    if standardize:
        y_scale = scales[future_output_rows(rho, T)]
        phi = y_scale[:, None] * phi / scales[None, :]
    meta = {
        "n_columns": int(n_cols),
        "regularization": "ridge" if singular else "none",
        "ridge_lambda": lam,
        "min_diag_ratio": float(diag.min() / norm) if norm > 0 else 0.0,
        "standardized": bool(standardize),
        "training_digest": training_digest(Z),
    }
    return PredictorModel(rho=rho, horizon=T, phi=phi, H=compose_h(phi, rho, T), meta=meta)


def fit_trajectories(trajs: list[Trajectory], rho: int, horizon: int, standardize: bool = False) -> PredictorModel:
    model = fit(build_hankel(trajs, rho, horizon), standardize=standardize)
    model.meta["sample_period"] = float(trajs[0].sample_period)
    return model


def _check_len(name: str, arr: np.ndarray, n: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape[0] != n:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


def predict(model: PredictorModel, z_p: np.ndarray, u_f: np.ndarray, d_f: np.ndarray) -> np.ndarray:
    """Stacked future outputs ``y(t+1..t+T)``, deck-major within each step.

    Accepts vectors or column-stacked batches.
    """
    T = model.horizon
    z_p = _check_len("z_p", z_p, model.past_size)
    u_f = _check_len("u_f", u_f, model.n_u * T)
    d_f = _check_len("d_f", d_f, model.n_d * T)
    return model.H @ np.concatenate([z_p, u_f, d_f], axis=0)


def split_window(Z: np.ndarray, rho: int, horizon: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cut Hankel columns into ``(z_p, u_f, d_f)``."""
    _, u_cols, d_cols = _future_columns(rho, horizon)
    return Z[: N_Z * rho], Z[u_cols], Z[d_cols]


@dataclass(frozen=True)
class MaeReport:
    per_deck: np.ndarray   # (T, 3)
    n_windows: int
    sample_period: float | None = None

    @property
    def per_step(self) -> np.ndarray:
        return self.per_deck.mean(axis=1)

    def rows(self) -> list[dict]:
        out = []
        for j, (deck, mean) in enumerate(zip(self.per_deck, self.per_step), start=1):
            minutes = j * self.sample_period / 60.0 if self.sample_period else None
            out.append({"step": j, "minutes": minutes, "mae_up": deck[0], "mae_mid": deck[1],
                        "mae_low": deck[2], "mae_mean": mean})
        return out


def evaluate_mae(model: PredictorModel, validation: list[Trajectory]) -> MaeReport:
    """Mean absolute multistep error over every window of ``validation``."""
    try:
        hs = build_hankel(validation, model.rho, model.horizon)
    except PipelineError as exc:
        raise PipelineError("validation data yield no prediction windows") from exc
    y_hat = predict(model, *split_window(hs.Z, model.rho, model.horizon))
    err = np.abs(y_hat - hs.Y).reshape(model.horizon, N_Y, -1)
    return MaeReport(per_deck=err.mean(axis=2), n_windows=hs.n_columns,
                     sample_period=float(validation[0].sample_period))


def save_model(model: PredictorModel, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    header = {"format": MODEL_FORMAT, "rho": model.rho, "horizon": model.horizon,
              "dims": [model.n_y, model.n_u, model.n_d], "meta": model.meta}
    with open(path, "wb") as fh:
        np.savez(fh, phi=np.asarray(model.phi), H=np.asarray(model.H), header=np.array(json.dumps(header)))
    return path


def load_model(path: str | Path) -> PredictorModel:
    with np.load(path, allow_pickle=False) as npz:
        header = json.loads(str(npz["header"]))
        if header.get("format") != MODEL_FORMAT:
            raise ValidationError(f"{path}: not a predictor model file")
        n_y, n_u, n_d = header["dims"]
        return PredictorModel(rho=int(header["rho"]), horizon=int(header["horizon"]),
                              phi=npz["phi"].copy(), H=npz["H"].copy(), meta=header["meta"],
                              n_y=n_y, n_u=n_u, n_d=n_d)
