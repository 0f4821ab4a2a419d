"""Linear Kalman filter with a 3D constant-velocity motion model.

State layout is ``[px, py, pz, vx, vy, vz]``; positions in room units,
velocities in room units per second.  Only positions are measured.

The generic :func:`predict` / :func:`update` / :func:`mahalanobis`
functions work for any state and measurement dimension and accept a
leading batch axis, which is how the tracker filters every track in one
call.  ``kf_*`` functions are the single-track API built on top of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, PositiveFloat
from scipy.spatial.distance import cdist

from ._schema import STRICT

STATE_DIM = 6
MEAS_DIM = 3

# measurement matrix: picks the position block
H = np.hstack([np.eye(3), np.zeros((3, 3))])
H.flags.writeable = False

SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-9
SINGULAR_COND = 1e12


class InvalidIntervalError(ValueError):
    pass


class SingularUpdateError(np.linalg.LinAlgError):
    """Innovation covariance is numerically singular."""


class KalmanConfig(BaseModel):
    model_config = STRICT

    sigma_a: PositiveFloat = 100.0
    sigma_m: PositiveFloat = 0.05
    # a two-frame start has position variance sigma_m^2 and velocity
    # variance 2 sigma_m^2 / dt^2 at the default 10 ms frame interval
    p0_pos: PositiveFloat = 0.0025
    p0_vel: PositiveFloat = 50.0

    @property
    def R(self) -> np.ndarray:
        return self.sigma_m**2 * np.eye(MEAS_DIM)


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Mean ``x`` (6,), covariance ``P`` (6, 6) and validity time ``t`` in ms."""

    x: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(STATE_DIM)
        P = np.array(self.P, dtype=float).reshape(STATE_DIM, STATE_DIM)
        x.flags.writeable = False
        P.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    @property
    def position(self) -> np.ndarray:
        return self.x[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[3:]


def transition(dt: float) -> np.ndarray:
    A = np.eye(STATE_DIM)
    A[:3, 3:] = dt * np.eye(3)
    return A


def control_matrix(dt: float) -> np.ndarray:
    """Maps a 3D acceleration held over ``dt`` onto the state."""
    return np.vstack([0.5 * dt * dt * np.eye(3), dt * np.eye(3)])


def process_noise(dt: float, sigma_a: float) -> np.ndarray:
    """Piecewise-constant white acceleration noise over one interval."""
    G = control_matrix(dt)
    return sigma_a**2 * (G @ G.T)


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise InvalidIntervalError(f"dt must be > 0, got {dt!r}")


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def predict(x, P, A, Q, B=None, u=None):
    """``x <- A x + B u``, ``P <- A P A^T + Q``.  Batch axes broadcast."""
    x = x @ A.T
    if u is not None:
        x = x + np.asarray(u, dtype=float) @ B.T
    P = A @ P @ A.T + Q
    return x, symmetrize(P)


def innovation_cov(P, H, R):
    return H @ P @ H.T + R


def update(x, P, z, H, R, check=True):
    """Kalman correction; returns ``(x, P)``.

    ``K = P H^T S^-1``, ``x <- x + K (z - H x)``, ``P <- (I - K H) P``,
    followed by symmetrization.
    """
    PHt = P @ H.T
    S = H @ PHt + R
    if check and np.any(np.linalg.cond(S) > SINGULAR_COND):
        raise SingularUpdateError("innovation covariance is numerically singular")
    Sinv = np.linalg.inv(S)
    K = PHt @ Sinv
    y = z - x @ H.T
    x = x + (K @ y[..., None])[..., 0]
    P = P - K @ np.swapaxes(PHt, -1, -2)
    return x, symmetrize(P)


def mahalanobis(x, P, z, H, R):
    """Squared Mahalanobis distance of ``z`` from the predicted measurement.

    ``x``/``P`` may carry a batch axis of tracks and ``z`` a batch axis of
    measurements; the result is then ``(n_tracks, n_meas)``.
    """
    S = innovation_cov(P, H, R)
    if np.any(np.linalg.cond(S) > SINGULAR_COND):
        raise SingularUpdateError("innovation covariance is numerically singular")
    Sinv = np.linalg.inv(S)
    zhat = x @ H.T
    if zhat.ndim == 1:
        d = np.asarray(z, dtype=float) - zhat
        return np.einsum("...i,ij,...j->...", d, Sinv, d)
    d = np.asarray(z, dtype=float)[None, :, :] - zhat[:, None, :]
    return np.einsum("nmi,nij,nmj->nm", d, Sinv, d)


# ---------------------------------------------------------------------------
# single-track API
# ---------------------------------------------------------------------------


def initial_covariance(cfg: KalmanConfig) -> np.ndarray:
    return np.diag([cfg.p0_pos] * 3 + [cfg.p0_vel] * 3)


def kf_init(z0, z1, dt: float, cfg: KalmanConfig, t: float = 0.0) -> KalmanState:
    """Start a track from two successive measurements ``dt`` seconds apart."""
    _check_dt(dt)
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    x = np.concatenate([z1, (z1 - z0) / dt])
    return KalmanState(x, initial_covariance(cfg), t)


def kf_predict(s: KalmanState, dt: float, cfg: KalmanConfig, u: Optional[np.ndarray] = None) -> KalmanState:
    _check_dt(dt)
    x, P = predict(s.x, s.P, transition(dt), process_noise(dt, cfg.sigma_a), control_matrix(dt), u)
    return KalmanState(x, P, s.t + dt * 1000.0)


def kf_update(s: KalmanState, z, cfg: KalmanConfig) -> KalmanState:
    x, P = update(s.x, s.P, np.asarray(z, dtype=float), H, cfg.R)
    return KalmanState(x, P, s.t)


def mahalanobis_sq(s: KalmanState, z, cfg: KalmanConfig) -> float:
    return float(mahalanobis(s.x, s.P, z, H, cfg.R))


def is_valid_covariance(P: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    P = np.asarray(P)
    if np.max(np.abs(P - P.T)) > tol:
        return False
    return bool(np.linalg.eigvalsh(P).min() >= -PSD_TOL)


# ---------------------------------------------------------------------------
# isotropic fast path
# ---------------------------------------------------------------------------
#
# With isotropic P0, Q and R every covariance the constant-velocity filter
# can reach has the form kron([[pp, pv], [pv, vv]], I3).  The tracker keeps
# one row per track, ``[px, py, pz, vx, vy, vz, pp, pv, vv]``, which turns
# the 6x6 algebra into a matrix product for prediction and a handful of
# elementwise operations for correction.

ISO_DIM = 9


def iso_row(x, P) -> np.ndarray:
    """Pack a mean and an isotropic covariance into one row."""
    P = np.asarray(P, dtype=float)
    return np.concatenate([np.asarray(x, dtype=float), [P[0, 0], P[0, 3], P[3, 3]]])


def iso_initial(cfg: KalmanConfig) -> np.ndarray:
    return np.array([cfg.p0_pos, 0.0, cfg.p0_vel])


def iso_covariance(rows) -> np.ndarray:
    """Expand ``(..., 9)`` rows to ``(..., 6, 6)`` covariances."""
    c = np.asarray(rows, dtype=float)[..., 6:]
    pp, pv, vv = c[..., 0, None, None], c[..., 1, None, None], c[..., 2, None, None]
    I = np.eye(3)
    top = np.concatenate([pp * I, pv * I], axis=-1)
    bottom = np.concatenate([pv * I, vv * I], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def iso_transition(dt: float, sigma_a: float) -> tuple[np.ndarray, np.ndarray]:
    """``(F, g)`` such that predicted rows are ``rows @ F.T + g``."""
    F = np.eye(ISO_DIM)
    F[:3, 3:6] = dt * np.eye(3)
    F[6, 7], F[6, 8] = 2.0 * dt, dt * dt
    F[7, 8] = dt
    q = sigma_a * sigma_a
    g = np.zeros(ISO_DIM)
    g[6:] = q * dt**4 / 4.0, q * dt**3 / 2.0, q * dt * dt
    return F, g


def iso_predict(rows: np.ndarray, dt: float, sigma_a: float) -> np.ndarray:
    F, g = iso_transition(dt, sigma_a)
    return rows @ F.T + g


def iso_update(rows: np.ndarray, z: np.ndarray, r: float) -> np.ndarray:
    """Correct ``rows`` (n, 9) in place with measurements ``z`` (n, 3) of variance ``r``."""
    n = len(rows)
    # per-axis gains [kp, kv] = [pp, pv] / (pp + r)
    k = rows[:, 6:8] / (rows[:, 6:7] + r)
    y = z - rows[:, :3]
    dvv = k[:, 1] * rows[:, 7]
    rows[:, :6].reshape(n, 2, 3)[:] += k[:, :, None] * y[:, None, :]
    # P <- (I - K H) P
    rows[:, 6:8] -= k * rows[:, 6:7]
    rows[:, 8] -= dvv
    return rows


def iso_mahalanobis(rows: np.ndarray, z: np.ndarray, r: float) -> np.ndarray:
    """``(n_tracks, n_meas)`` squared Mahalanobis distances."""
    return cdist(rows[:, :3], z, "sqeuclidean") / (rows[:, 6:7] + r)
