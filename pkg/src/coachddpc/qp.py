"""Dense convex QP solver: primal-dual interior point with Mehrotra predictor-corrector.

Solves ``min 1/2 x'Px + q'x  s.t.  Gx <= h`` for small dense problems
(tens of variables).  After the interior-point loop the estimated active
set is polished by one equality-constrained KKT solve, which drives the
residuals to machine precision whenever the guess is right.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class KktResiduals:
    """Infinity-norm KKT residuals, each scaled by ``1 + `` the size of the data it involves."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass(frozen=True)
class QpResult:
    x: np.ndarray
    z: np.ndarray
    status: QpStatus
    objective: float
    iterations: int
    residuals: KktResiduals
    polished: bool = False
    active: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def kkt_residuals(P, q, G, h, x, z) -> KktResiduals:
    grad = P @ x + q
    slack = h - G @ x
    stat = np.max(np.abs(grad + G.T @ z), initial=0.0)
    scale_d = 1.0 + max(np.max(np.abs(q), initial=0.0), np.max(np.abs(P @ x), initial=0.0))
    return KktResiduals(
        stationarity=stat / scale_d,
        primal=np.max(np.maximum(-slack, 0.0), initial=0.0) / (1.0 + np.max(np.abs(h), initial=0.0)),
        dual=np.max(np.maximum(-z, 0.0), initial=0.0),
        complementarity=np.max(np.abs(z * slack), initial=0.0) / scale_d,
    )


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _polish(P, q, G, h, active: np.ndarray):
    n = P.shape[0]
    Ga = G[active]
    k = Ga.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = P
    kkt[:n, n:] = Ga.T
    kkt[n:, :n] = Ga
    rhs = np.concatenate([-q, h[active]])
    try:
        with warnings.catch_warnings():
            # a wrong active-set guess may be degenerate; residuals are checked by the caller
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            sol = linalg.solve(kkt, rhs, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    z = np.zeros(G.shape[0])
    z[active] = sol[n:]
    return sol[:n], z


def _refine_active_set(P, q, G, h, guess: np.ndarray, max_changes: int = 20):
    """Few primal-dual active-set corrections starting from the interior-point guess."""
    active = guess.copy()
    for _ in range(max_changes):
        cand = _polish(P, q, G, h, np.flatnonzero(active))
        if cand is None:
            return None
        x, z = cand
        viol = G @ x - h
        tol = 1e-10 * (1.0 + np.abs(h))
        if np.any(z < -1e-12):
            active[int(np.argmin(z))] = False
        elif np.any(viol > tol):
            active[int(np.argmax(viol - tol))] = True
        else:
            return x, z
    return None


def solve_qp(P, q, G=None, h=None, tol: float = 1e-10, max_iter: int = 100, polish: bool = True,
             x0=None) -> QpResult:
    """Minimize ``1/2 x'Px + q'x`` subject to ``Gx <= h``.

    Rows of ``G`` with ``h = +inf`` are ignored.  ``P`` must be symmetric
    positive semidefinite; a positive definite ``P`` gives a unique optimizer.
    ``x0`` optionally replaces the default least-squares starting point; it
    need not be feasible.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    P = 0.5 * (P + P.T)
    if G is None:
        G = np.zeros((0, n))
        h = np.zeros(0)
    G = np.asarray(G, dtype=float).reshape(-1, n)
    h = np.asarray(h, dtype=float).reshape(-1)
    keep = ~np.isposinf(h)
    G_all, h_all = G, h
    G, h = G[keep], h[keep]
    m = h.size

    def finish(x, z_small, status, it, polished=False):
        z_full = np.zeros(h_all.size)
        z_full[keep] = z_small
        res = kkt_residuals(P, q, G, h, x, z_small)
        active = np.flatnonzero(keep)[z_small > 0] if polished else np.flatnonzero(keep)[z_small > 1e-8]
        obj = float(0.5 * x @ P @ x + q @ x)
        return QpResult(x=x, z=z_full, status=status, objective=obj, iterations=it,
                        residuals=res, polished=polished, active=active)

    if m == 0:
        x = linalg.lstsq(P, -q)[0] if n else np.zeros(0)
        return finish(x, np.zeros(0), QpStatus.OPTIMAL, 0)

    # starting point: regularized least-squares fit of both objective and constraints
    if x0 is None:
        x = linalg.solve(P + G.T @ G + 1e-8 * np.eye(n), -q + G.T @ h, assume_a="pos")
    else:
        x = np.asarray(x0, dtype=float).reshape(n).copy()
    s = h - G @ x
    s = np.maximum(s, 1.0)
    z = np.ones(m)
    scale = 1.0 + max(np.max(np.abs(q)), np.max(np.abs(h)), np.max(np.abs(P)))

    status = QpStatus.MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        r_d = P @ x + q + G.T @ z
        r_p = G @ x + s - h
        mu = float(s @ z) / m
        if (np.max(np.abs(r_d)) <= tol * scale and np.max(np.abs(r_p)) <= tol * scale and mu <= tol * scale):
            status = QpStatus.OPTIMAL
            break
        if np.max(z) > 1e14 * scale or not np.all(np.isfinite(x)):
            status = QpStatus.INFEASIBLE
            break
        w = z / s
        K = P + (G.T * w) @ G
        try:
            factor = linalg.cho_factor(K + 1e-14 * np.trace(K) / n * np.eye(n), check_finite=False)
        except linalg.LinAlgError:
            factor = None

        def direction(r_c):
            rhs = -r_d - G.T @ (w * r_p - r_c / s)
            if factor is not None:
                dx = linalg.cho_solve(factor, rhs, check_finite=False)
            else:
                dx = linalg.lstsq(K, rhs)[0]
            dz = w * (G @ dx + r_p) - r_c / s
            ds = -r_p - G @ dx
            return dx, ds, dz

        # predictor
        dx, ds, dz = direction(s * z)
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, ds, dz = direction(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz

    result = finish(x, z, status, it)
    if polish and status != QpStatus.INFEASIBLE:
        tight = (h - G @ x) <= 1e-9 * (1.0 + np.abs(h))
        cand = _refine_active_set(P, q, G, h, (z > s) | tight)
        if cand is not None:
            xp, zp = cand
            res = kkt_residuals(P, q, G, h, xp, zp)
            if res.worst <= max(result.residuals.worst, 1e-9):
                return finish(xp, zp, QpStatus.OPTIMAL if res.worst <= 1e-8 else status, it, True)
    return result
