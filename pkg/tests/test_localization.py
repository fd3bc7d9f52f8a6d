import math

import numpy as np
import pytest

from lunarsim.geometry import integrate_arc, wrap_angle
from lunarsim.localization import (IMU_YAW_RATE, VO_POSE_DELTA, WHEEL_TWIST,
                                   BeliefState, MeasurementModel, ekf_predict,
                                   ekf_update, vo_delta_to_pose_measurement)

Q_SMALL = np.diag([1e-8, 1e-8, 1e-8, 1e-6, 1e-6])


def test_predict_at_rest_adds_q():
    # zero velocity and zero velocity uncertainty: F P F^T reduces to P
    b = BeliefState(mean=np.zeros(5),
                    covariance=np.diag([1e-4, 1e-4, 1e-4, 0.0, 0.0]))
    p0 = b.covariance.copy()
    b1 = ekf_predict(b, 1.0, Q_SMALL)
    assert np.allclose(b1.mean, b.mean)
    assert np.allclose(b1.covariance, p0 + Q_SMALL, atol=1e-15)


def test_predict_straight_line():
    b = BeliefState(mean=[0.0, 0.0, 0.0, 1.0, 0.0], covariance=np.eye(5) * 1e-6)
    b1 = ekf_predict(b, 1.0, Q_SMALL)
    assert b1.mean[0] == pytest.approx(1.0, abs=1e-15)
    assert b1.mean[1] == pytest.approx(0.0, abs=1e-15)


def test_predict_jacobian_matches_finite_differences():
    rng = np.random.default_rng(31)
    dt = 0.1

    def motion(mean):
        x, y, th, v, om = mean
        if abs(om) > 1e-6:
            th1 = th + om * dt
            return np.array([x + v / om * (math.sin(th1) - math.sin(th)),
                             y - v / om * (math.cos(th1) - math.cos(th)),
                             th1, v, om])
        return np.array([x + v * math.cos(th) * dt,
                         y + v * math.sin(th) * dt, th + om * dt, v, om])

    for _ in range(200):
        mean = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5),
                         rng.uniform(-3, 3), rng.uniform(-1.5, 1.5),
                         rng.uniform(0.05, 1.0) * rng.choice([-1.0, 1.0])])
        b = BeliefState(mean=mean, covariance=np.eye(5) * 1e-6)
        b1 = ekf_predict(b, dt, np.zeros((5, 5)))
        # covariance after predict with P0=I is F F^T; recover F via FD oracle
        fd = np.zeros((5, 5))
        for k in range(5):
            dm = np.zeros(5)
            dm[k] = 1e-7
            fd[:, k] = (motion(mean + dm) - motion(mean - dm)) / 2e-7
        b_eye = BeliefState(mean=mean, covariance=np.eye(5))
        p1 = ekf_predict(b_eye, dt, np.zeros((5, 5))).covariance
        assert np.allclose(p1, fd @ fd.T, atol=1e-6)
        assert np.allclose(b1.mean[:2], motion(mean)[:2], atol=1e-12)


def test_update_with_predicted_value_keeps_mean():
    b = BeliefState(mean=[1.0, 2.0, 0.5, 0.8, 0.1],
                    covariance=np.eye(5) * 0.01)
    z = MeasurementModel(kind=WHEEL_TWIST, value=[0.8, 0.1],
                         noise=np.eye(2) * 1e-4)
    b1, stats = ekf_update(b, z)
    assert stats.accepted
    assert np.allclose(b1.mean, b.mean, atol=1e-12)
    assert np.trace(b1.covariance) <= np.trace(b.covariance) + 1e-15


def test_update_tight_pose_measurement_dominates():
    b = BeliefState(mean=[0.0, 0.0, 0.0, 0.0, 0.0], covariance=np.eye(5) * 1.0)
    z = MeasurementModel(kind=VO_POSE_DELTA, value=[0.3, -0.2, 0.1],
                         noise=np.eye(3) * 1e-12)
    b1, stats = ekf_update(b, z, gate_chi2=float("inf"))
    assert np.allclose(b1.mean[:3], [0.3, -0.2, 0.1], atol=1e-6)


def test_update_gates_outliers():
    b = BeliefState(mean=[0.0, 0.0, 0.0, 0.0, 0.0],
                    covariance=np.eye(5) * 1e-4)
    z = MeasurementModel(kind=IMU_YAW_RATE, value=[5.0], noise=[[1e-6]])
    b1, stats = ekf_update(b, z)
    assert not stats.accepted
    assert np.allclose(b1.mean, b.mean)
    assert np.allclose(b1.covariance, b.covariance)


def test_noiseless_fusion_sequence_converges():
    # 100-step noiseless odometry + VO: final pose error < 1e-6
    dt = 0.05
    truth = (0.0, 0.0, 0.0)
    # initial velocity genuinely unknown: large prior variance
    belief = BeliefState.initial(vel_var=1.0)
    q = np.diag([1e-8, 1e-8, 1e-8, 1e-4, 1e-4])
    prev_anchor = truth
    for k in range(100):
        v = 0.8 + 0.2 * math.sin(0.1 * k)
        om = 0.3 * math.cos(0.07 * k)
        new_truth = integrate_arc(truth, v, 0.0, om, dt)
        # encoders measure the twist over this step: fuse it, then predict
        zt = MeasurementModel(kind=WHEEL_TWIST, value=[v, om],
                              noise=np.eye(2) * 1e-12)
        belief, st = ekf_update(belief, zt)
        assert st.accepted
        zg = MeasurementModel(kind=IMU_YAW_RATE, value=[om], noise=[[1e-12]])
        belief, _ = ekf_update(belief, zg)
        belief = ekf_predict(belief, dt, q)
        if k % 10 == 9:
            # noiseless VO delta from the anchor truth
            c, s = math.cos(prev_anchor[2]), math.sin(prev_anchor[2])
            dx = new_truth[0] - prev_anchor[0]
            dy = new_truth[1] - prev_anchor[1]
            delta = (c * dx + s * dy, -s * dx + c * dy,
                     wrap_angle(new_truth[2] - prev_anchor[2]))
            z = vo_delta_to_pose_measurement(delta, prev_anchor,
                                             np.eye(3) * 1e-10)
            belief, stats = ekf_update(belief, z)
            assert stats.accepted
            prev_anchor = new_truth
        truth = new_truth
    err = np.hypot(belief.mean[0] - truth[0], belief.mean[1] - truth[1])
    assert err < 1e-6
    assert abs(wrap_angle(belief.mean[2] - truth[2])) < 1e-6


def test_covariance_spd_over_many_steps():
    rng = np.random.default_rng(34)
    belief = BeliefState.initial()
    q = np.diag([1e-8, 1e-8, 1e-8, 1e-4, 1e-4]) * 0.05
    for k in range(10_000):
        belief = ekf_predict(belief, 0.05, q)
        if k % 3 == 0:
            z = MeasurementModel(kind=WHEEL_TWIST,
                                 value=[rng.normal(0.5, 0.01),
                                        rng.normal(0.0, 0.01)],
                                 noise=np.eye(2) * 1e-4)
            belief, _ = ekf_update(belief, z, gate_chi2=float("inf"))
        if k % 500 == 0 or k == 9999:
            p = belief.covariance
            assert np.max(np.abs(p - p.T)) < 1e-12
            assert np.all(np.linalg.eigvalsh(p) > 0)
    assert abs(belief.mean[2]) <= math.pi


def test_theta_stays_wrapped():
    belief = BeliefState(mean=[0.0, 0.0, 3.0, 0.0, 1.0],
                         covariance=np.eye(5) * 1e-4)
    for _ in range(100):
        belief = ekf_predict(belief, 0.1, Q_SMALL)
        assert -math.pi < belief.mean[2] <= math.pi


def _chi2_interval_mean(dof, n_runs):
    # 95% interval for the average of n_runs chi-square(dof) variables
    from scipy.stats import chi2
    lo = chi2.ppf(0.025, dof * n_runs) / n_runs
    hi = chi2.ppf(0.975, dof * n_runs) / n_runs
    return lo, hi


def test_nees_consistency_monte_carlo():
    # 50 Monte-Carlo runs of a 60 s trajectory; time-averaged NEES must sit
    # inside the 95% chi-square consistency band for dim-5 state
    n_runs = 50
    dt = 0.1
    steps = 600
    q_v = 1e-3
    q_om = 1e-3
    r_v = 4e-4
    r_om = 4e-4
    nees_means = []
    for run in range(n_runs):
        rng = np.random.default_rng(1000 + run)
        truth = np.array([0.0, 0.0, 0.0, 0.5, 0.1])
        belief = BeliefState(mean=truth.copy(),
                             covariance=np.diag([1e-6] * 3 + [1e-4] * 2))
        q = np.diag([0.0, 0.0, 0.0, q_v, q_om]) * dt
        nees = []
        for k in range(steps):
            # truth propagates the same unicycle model with injected noise
            pose = integrate_arc(truth[:3], truth[3], 0.0, truth[4], dt)
            truth[:3] = pose
            truth[3] += math.sqrt(q_v * dt) * rng.standard_normal()
            truth[4] += math.sqrt(q_om * dt) * rng.standard_normal()
            belief = ekf_predict(belief, dt, q)
            z = MeasurementModel(
                kind=WHEEL_TWIST,
                value=[truth[3] + math.sqrt(r_v) * rng.standard_normal(),
                       truth[4] + math.sqrt(r_om) * rng.standard_normal()],
                noise=np.diag([r_v, r_om]))
            belief, _ = ekf_update(belief, z, gate_chi2=float("inf"))
            err = belief.mean - truth
            err[2] = wrap_angle(err[2])
            nees.append(err @ np.linalg.solve(belief.covariance, err))
        nees_means.append(np.mean(nees))
    lo, hi = _chi2_interval_mean(5, n_runs)
    avg = float(np.mean(nees_means))
    assert lo <= avg <= hi, f"average NEES {avg:.3f} outside [{lo:.3f}, {hi:.3f}]"
