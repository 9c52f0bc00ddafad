import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bottleneck_servo.errors import AngleWrap, NonSPDCovariance
from bottleneck_servo.fusion import FusionConfig, VarianceWindow, push_variance, ukf_init, ukf_step

from helpers import linear_kf, ukf_vs_average

CFG = FusionConfig()


def is_spd(P):
    return np.allclose(P, P.T, atol=1e-12) and np.linalg.eigvalsh(P).min() > 0


def test_init_keeps_mean():
    prior = np.array([0.1, -0.2, 0.3, 0.4, 0.5, 0.6])
    b = ukf_init(prior, CFG.prior_cov())
    assert np.array_equal(b.mean, prior)
    assert is_spd(b.cov)


def test_init_rejects_singular_cov():
    P = CFG.prior_cov()
    P[2, 2] = 0.0
    with pytest.raises(NonSPDCovariance):
        ukf_init(np.zeros(6), P)


def test_measurement_at_mean_keeps_mean():
    x = np.array([0.2, 0.1, -0.4, 0.1, 0.0, 0.3])
    b = ukf_init(x, CFG.prior_cov())
    b2 = ukf_step(b, x, CFG.meas_cov(60, 0.0), CFG.process_cov())
    assert np.allclose(b2.mean, x, atol=1e-9)
    assert np.trace(b2.cov) <= np.trace(b.cov)


def test_repeated_measurement_converges():
    z = np.array([0.3, -0.1, 0.2, 0.05, -0.02, 0.4])
    b = ukf_init(np.zeros(6), CFG.prior_cov())
    tr = np.trace(b.cov)
    Rm = CFG.prior_cov() * 1e-9
    for _ in range(50):
        b = ukf_step(b, z, Rm, np.zeros((6, 6)))
        assert np.trace(b.cov) <= tr + 1e-18
        tr = np.trace(b.cov)
    assert np.allclose(b.mean, z, atol=1e-6)


def test_rotation_residual_takes_shortest_arc():
    # 179 deg about z and -179 deg about z are 2 deg apart
    x = np.array([0, 0, np.deg2rad(175), 0, 0, 0])
    z = np.array([0, 0, -np.deg2rad(179), 0, 0, 0])
    P = np.diag([np.deg2rad(0.5) ** 2] * 3 + [1e-4] * 3)
    b = ukf_step(ukf_init(x, P), z, P, np.zeros((6, 6)))
    ang = np.linalg.norm(b.mean[:3])
    assert np.degrees(ang) > 176


def test_angle_wrap_guard():
    P = np.diag([2.0**2] * 3 + [1e-4] * 3)
    with pytest.raises(AngleWrap):
        ukf_step(ukf_init([0, 0, 3.0, 0, 0, 0], P), np.zeros(6), P, np.zeros((6, 6)))
    with pytest.raises(AngleWrap):
        ukf_step(ukf_init(np.zeros(6), P), [0, 0, np.pi, 0, 0, 0], P, np.zeros((6, 6)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_covariance_stays_spd(seed):
    r = np.random.default_rng(seed)
    b = ukf_init(r.normal(0, 0.3, 6), CFG.prior_cov() * r.uniform(0.1, 10))
    for _ in range(40):
        z = b.mean + r.normal(0, 0.02, 6)
        b = ukf_step(b, z, CFG.meas_cov(int(r.integers(1, 200)), r.uniform(0, 0.03)),
                     CFG.process_cov() * r.uniform(0, 5))
        assert is_spd(b.cov)


def test_agrees_with_linear_kalman_filter():
    r = np.random.default_rng(0)
    P0 = CFG.prior_cov()
    Rm = CFG.meas_cov(60, 0.0)
    Q = CFG.process_cov()
    x0 = r.normal(0, 0.01, 6)
    zs = x0 + r.normal(0, 0.01, (30, 6))
    b = ukf_init(x0, P0)
    for z in zs:
        b = ukf_step(b, z, Rm, Q)
    x, P = linear_kf(x0, P0, zs, Rm, Q)
    assert np.allclose(b.mean, x, rtol=1e-6, atol=1e-12)
    assert np.allclose(b.cov, P, rtol=1e-6, atol=1e-15)


def test_prior_helps_over_many_seeds():
    post, avg = ukf_vs_average(range(1000))
    assert post < avg


def test_order_insensitive_at_convergence():
    r = np.random.default_rng(1)
    truth = np.array([0.1, 0.2, -0.1, 0.3, 0.1, 0.5])
    zs = truth + r.normal(0, 0.01, (150, 6))
    Rm = np.eye(6) * 1e-4

    def run(seq):
        b = ukf_init(truth + 0.02, np.eye(6) * 1e-3)
        for z in seq:
            b = ukf_step(b, z, Rm, np.zeros((6, 6)))
        return b.mean

    a, c = run(zs), run(zs[::-1])
    assert np.allclose(a, c, atol=1e-9)


def test_variance_window():
    win = VarianceWindow(10)
    assert np.all(np.isinf(win.variance))
    push_variance(win, np.ones(6))
    assert np.all(np.isinf(win.variance))
    for _ in range(12):
        push_variance(win, np.ones(6))
    assert np.array_equal(win.variance, np.zeros(6))
    d = 0.3
    for k in range(10):
        v = np.zeros(6)
        v[4] = d if k % 2 else -d
        push_variance(win, v)
    assert win.variance[4] == pytest.approx(d**2 * 10 / 9, abs=1e-12)
    assert len(win.buffer) == 10


def test_meas_cov_grows_with_fewer_or_worse_matches():
    base = CFG.meas_cov(60, 0.001)
    assert np.all(np.diag(CFG.meas_cov(20, 0.001)) > np.diag(base))
    assert np.all(np.diag(CFG.meas_cov(60, 0.02)) > np.diag(base))
