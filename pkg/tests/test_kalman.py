import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are

from markertrack import kalman
from markertrack.kalman import (
    H,
    InvalidIntervalError,
    KalmanConfig,
    KalmanState,
    SingularUpdateError,
    is_valid_covariance,
    kf_init,
    kf_predict,
    kf_update,
    mahalanobis_sq,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def scalar_riccati(p0, n):
    A = Q = R = Hs = np.eye(1)
    x, P = np.zeros(1), np.array([[p0]])
    for _ in range(n):
        x, P = kalman.predict(x, P, A, Q)
        x, P = kalman.update(x, P, np.zeros(1), Hs, R)
    return float(P[0, 0])


@pytest.mark.parametrize("p0", [0.0, 1.0, 100.0])
def test_scalar_posterior_converges_to_golden_ratio_conjugate(p0):
    assert abs(scalar_riccati(p0, 60) - GOLDEN) < 1e-12


def test_tiny_measurement_noise_returns_measurement():
    cfg = KalmanConfig(sigma_m=1e-6)
    s = kf_init([0, 0, 0], [0.1, 0.2, 0.3], 0.01, cfg)
    s = kf_predict(s, 0.01, cfg)
    z = np.array([0.35, 0.1, -0.2])
    post = kf_update(s, z, cfg)
    assert np.max(np.abs(post.position - z)) < 1e-6


def test_cv_steady_state_matches_dare():
    cfg = KalmanConfig(sigma_a=3.0, sigma_m=0.05)
    dt = 0.01
    A, Q = kalman.transition(dt), kalman.process_noise(dt, cfg.sigma_a)
    s = kf_init([0, 0, 0], [0, 0, 0], dt, cfg)
    for _ in range(5000):
        s = kf_update(kf_predict(s, dt, cfg), [0, 0, 0], cfg)
    prior = kf_predict(s, dt, cfg).P
    expected = solve_discrete_are(A.T, H.T, Q, cfg.R)
    assert np.allclose(prior, expected, rtol=1e-8, atol=1e-14)


def test_predict_moves_position_by_velocity():
    cfg = KalmanConfig()
    s = KalmanState(np.array([1.0, 2.0, 3.0, 0.5, -1.0, 2.0]), np.eye(6), t=100)
    p = kf_predict(s, 0.02, cfg)
    assert np.allclose(p.position, [1.01, 1.98, 3.04])
    assert np.allclose(p.velocity, s.velocity)
    assert p.t == pytest.approx(120.0)


def test_predict_with_control_input():
    cfg = KalmanConfig()
    s = KalmanState(np.zeros(6), np.eye(6))
    p = kf_predict(s, 0.1, cfg, u=np.array([0.0, 0.0, -10.0]))
    assert np.allclose(p.position, [0, 0, -0.05])
    assert np.allclose(p.velocity, [0, 0, -1.0])


def test_process_noise_structure():
    dt, sa = 0.01, 2.0
    Q = kalman.process_noise(dt, sa)
    assert Q[0, 0] == pytest.approx(sa**2 * dt**4 / 4)
    assert Q[0, 3] == pytest.approx(sa**2 * dt**3 / 2)
    assert Q[3, 3] == pytest.approx(sa**2 * dt**2)
    assert Q[0, 1] == 0.0


def test_kf_init_two_point_velocity():
    cfg = KalmanConfig()
    s = kf_init([0, 0, 5], [0.01, 0, 5], 0.01, cfg, t=40)
    assert np.allclose(s.position, [0.01, 0, 5])
    assert np.allclose(s.velocity, [1.0, 0, 0])
    assert np.allclose(np.diag(s.P), [cfg.p0_pos] * 3 + [cfg.p0_vel] * 3)
    assert s.t == 40


@pytest.mark.parametrize("dt", [0.0, -0.01])
def test_non_positive_interval_rejected(dt):
    cfg = KalmanConfig()
    s = kf_init([0, 0, 0], [0, 0, 0], 0.01, cfg)
    with pytest.raises(InvalidIntervalError):
        kf_predict(s, dt, cfg)
    with pytest.raises(InvalidIntervalError):
        kf_init([0, 0, 0], [0, 0, 0], dt, cfg)


def test_singular_innovation_detected():
    P = np.diag([1e15, 1, 1, 1, 1, 1.0])
    with pytest.raises(SingularUpdateError):
        kalman.update(np.zeros(6), P, np.zeros(3), H, 1e-3 * np.eye(3))


def test_update_reduces_uncertainty():
    cfg = KalmanConfig()
    s = kf_predict(kf_init([0, 0, 0], [0.01, 0, 0], 0.01, cfg), 0.01, cfg)
    post = kf_update(s, [0.02, 0, 0], cfg)
    assert np.trace(post.P) < np.trace(s.P)
    assert is_valid_covariance(post.P)


def test_mahalanobis_scalar():
    cfg = KalmanConfig(sigma_m=1.0)
    s = KalmanState(np.zeros(6), np.zeros((6, 6)))
    assert mahalanobis_sq(s, [1.0, 2.0, 2.0], cfg) == pytest.approx(9.0)


def test_batched_mahalanobis_matches_single():
    cfg = KalmanConfig()
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 6))
    P = np.stack([np.eye(6) * (k + 1) * 0.01 for k in range(4)])
    Z = rng.normal(size=(5, 3))
    M = kalman.mahalanobis(X, P, Z, H, cfg.R)
    for i in range(4):
        for j in range(5):
            assert M[i, j] == pytest.approx(mahalanobis_sq(KalmanState(X[i], P[i]), Z[j], cfg))


def test_invalid_config():
    with pytest.raises(ValueError):
        KalmanConfig(sigma_m=0.0)
    with pytest.raises(ValueError):
        KalmanConfig(sigma_a=-1.0)
    with pytest.raises(ValueError):
        KalmanConfig(extra=1)


# -- properties ---------------------------------------------------------------

coords = st.floats(-10, 10, allow_nan=False)
steps = st.lists(
    st.tuples(st.floats(0.001, 0.1), st.booleans(), st.tuples(coords, coords, coords)),
    min_size=1,
    max_size=30,
)


@given(steps, st.floats(0.01, 200.0), st.floats(1e-3, 1.0))
def test_covariance_stays_symmetric_psd(seq, sigma_a, sigma_m):
    cfg = KalmanConfig(sigma_a=sigma_a, sigma_m=sigma_m)
    s = kf_init([0, 0, 0], [0, 0, 0], 0.01, cfg)
    for dt, measured, z in seq:
        s = kf_predict(s, dt, cfg)
        assert is_valid_covariance(s.P)
        if measured:
            s = kf_update(s, z, cfg)
            assert is_valid_covariance(s.P)


def _iso_rows(xs, cs):
    return np.array([np.concatenate([x, c]) for x, c in zip(xs, cs)])


@given(steps, st.floats(0.1, 200.0), st.floats(1e-3, 1.0))
def test_isotropic_fast_path_matches_full_filter(seq, sigma_a, sigma_m):
    cfg = KalmanConfig(sigma_a=sigma_a, sigma_m=sigma_m)
    r = sigma_m**2
    s = kf_init([0, 0, 0], [0.01, 0.0, -0.01], 0.01, cfg)
    row = kalman.iso_row(s.x, s.P)[None, :]
    for dt, measured, z in seq:
        s = kf_predict(s, dt, cfg)
        row = kalman.iso_predict(row, dt, sigma_a)
        zz = np.array(z)[None, :]
        full = mahalanobis_sq(s, z, cfg)
        fast = kalman.iso_mahalanobis(row, zz, r)[0, 0]
        assert fast == pytest.approx(full, rel=1e-7, abs=1e-9)
        if measured:
            s = kf_update(s, z, cfg)
            row = kalman.iso_update(row, zz, r)
        scale = 1.0 + np.abs(s.x).max()
        assert np.allclose(row[0, :6], s.x, rtol=1e-9, atol=1e-9 * scale)
        assert np.allclose(kalman.iso_covariance(row)[0], s.P, rtol=1e-7, atol=1e-12)
