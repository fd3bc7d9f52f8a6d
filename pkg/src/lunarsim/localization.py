"""Planar EKF over [x, y, theta, v, omega] fusing odometry, IMU, and VO.

Wheel odometry arrives as a body-twist measurement, the IMU as a yaw-rate
measurement, and visual odometry as a pose-delta anchored at the belief
pose of the earlier frame (converted here to a world-frame pose
measurement). Updates are gated on the Mahalanobis distance at the 99%
chi-square threshold for the measurement dimension.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .geometry import wrap_angle

WHEEL_TWIST = "wheel_twist"
IMU_YAW_RATE = "imu_yaw_rate"
VO_POSE_DELTA = "vo_pose_delta"

# chi-square 99% critical values by degrees of freedom
_CHI2_99 = {1: 6.6348966010212145, 2: 9.21034037197618,
            3: 11.344866730144373, 5: 15.08627246938899}


@dataclass
class BeliefState:
    mean: np.ndarray                 # [x, y, theta, v, omega]
    covariance: np.ndarray           # 5x5 SPD

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).copy()
        self.covariance = np.asarray(self.covariance, dtype=float).copy()
        self.mean[2] = wrap_angle(self.mean[2])

    @property
    def pose(self):
        return (float(self.mean[0]), float(self.mean[1]), float(self.mean[2]))

    @staticmethod
    def initial(pose=(0.0, 0.0, 0.0), pos_var=1e-6, ang_var=1e-6,
                vel_var=1e-4):
        mean = np.array([pose[0], pose[1], pose[2], 0.0, 0.0])
        cov = np.diag([pos_var, pos_var, ang_var, vel_var, vel_var])
        return BeliefState(mean=mean, covariance=cov)


@dataclass
class MeasurementModel:
    kind: str
    value: np.ndarray
    noise: np.ndarray                # covariance R, SPD
    anchor_pose: tuple | None = None  # VO only: belief pose at earlier frame

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, dtype=float))
        self.noise = np.atleast_2d(np.asarray(self.noise, dtype=float))


@dataclass
class UpdateStats:
    innovation: np.ndarray
    mahalanobis_sq: float
    accepted: bool


def _symmetrize(p):
    return 0.5 * (p + p.T)


def ekf_predict(belief, dt, process_noise):
    """Propagate the belief through the unicycle motion model.

    Uses the exact-arc form when turning and the straight-line limit
    otherwise; the covariance follows the analytic Jacobian.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x, y, th, v, om = belief.mean
    f = np.eye(5)
    if abs(om) > 1e-6:
        th1 = th + om * dt
        s0, c0 = math.sin(th), math.cos(th)
        s1, c1 = math.sin(th1), math.cos(th1)
        x1 = x + v / om * (s1 - s0)
        y1 = y - v / om * (c1 - c0)
        f[0, 2] = v / om * (c1 - c0)
        f[0, 3] = (s1 - s0) / om
        f[0, 4] = -v / om ** 2 * (s1 - s0) + v / om * c1 * dt
        f[1, 2] = v / om * (s1 - s0)
        f[1, 3] = -(c1 - c0) / om
        f[1, 4] = v / om ** 2 * (c1 - c0) + v / om * s1 * dt
        f[2, 4] = dt
    else:
        s0, c0 = math.sin(th), math.cos(th)
        x1 = x + v * c0 * dt
        y1 = y + v * s0 * dt
        th1 = th + om * dt
        f[0, 2] = -v * s0 * dt
        f[0, 3] = c0 * dt
        f[0, 4] = -0.5 * v * s0 * dt * dt
        f[1, 2] = v * c0 * dt
        f[1, 3] = s0 * dt
        f[1, 4] = 0.5 * v * c0 * dt * dt
        f[2, 4] = dt
    mean = np.array([x1, y1, wrap_angle(th1), v, om])
    cov = _symmetrize(f @ belief.covariance @ f.T + np.asarray(process_noise))
    return BeliefState(mean=mean, covariance=cov)


def _measurement_matrix(measurement, belief):
    """(H, predicted z, angle-wrap mask) for the measurement kind."""
    kind = measurement.kind
    if kind == WHEEL_TWIST:
        h = np.zeros((2, 5))
        h[0, 3] = 1.0
        h[1, 4] = 1.0
        return h, belief.mean[[3, 4]], np.array([False, False])
    if kind == IMU_YAW_RATE:
        h = np.zeros((1, 5))
        h[0, 4] = 1.0
        return h, belief.mean[[4]], np.array([False])
    if kind == VO_POSE_DELTA:
        h = np.zeros((3, 5))
        h[0, 0] = h[1, 1] = h[2, 2] = 1.0
        return h, belief.mean[[0, 1, 2]], np.array([False, False, True])
    raise ValueError(f"unknown measurement kind '{kind}'")


def vo_delta_to_pose_measurement(delta, anchor_pose, noise):
    """Convert a body-frame VO pose delta to a world pose measurement.

    The delta (dx, dy, dtheta) is rotated into the world frame using the
    anchor pose heading (the belief when the earlier frame was taken) and
    composed onto the anchor.
    """
    ax, ay, ath = anchor_pose
    c, s = math.cos(ath), math.sin(ath)
    z = np.array([ax + c * delta[0] - s * delta[1],
                  ay + s * delta[0] + c * delta[1],
                  wrap_angle(ath + delta[2])])
    return MeasurementModel(kind=VO_POSE_DELTA, value=z, noise=noise,
                            anchor_pose=tuple(anchor_pose))


def ekf_update(belief, measurement, gate_chi2=None):
    """Joseph-form EKF update with chi-square gating.

    Returns (belief, stats). A gated (outlier) measurement leaves the
    belief unchanged and reports accepted=False.
    """
    h, z_pred, wrap_mask = _measurement_matrix(measurement, belief)
    r = measurement.noise
    innovation = measurement.value - z_pred
    innovation[wrap_mask] = np.array(
        [wrap_angle(i) for i in innovation[wrap_mask]])
    s = h @ belief.covariance @ h.T + r
    s = _symmetrize(s)
    try:
        s_chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as e:
        raise NumericalFailure(f"singular innovation covariance: {e}") from e
    alpha = np.linalg.solve(s_chol, innovation)
    maha_sq = float(alpha @ alpha)
    dim = innovation.shape[0]
    threshold = gate_chi2 if gate_chi2 is not None else _CHI2_99[dim]
    if maha_sq > threshold:
        return belief, UpdateStats(innovation=innovation,
                                   mahalanobis_sq=maha_sq, accepted=False)
    k = np.linalg.solve(s, h @ belief.covariance).T
    mean = belief.mean + k @ innovation
    mean[2] = wrap_angle(mean[2])
    ikh = np.eye(5) - k @ h
    cov = _symmetrize(ikh @ belief.covariance @ ikh.T + k @ r @ k.T)
    new = BeliefState(mean=mean, covariance=cov)
    return new, UpdateStats(innovation=innovation, mahalanobis_sq=maha_sq,
                            accepted=True)


@dataclass
class EkfConfig:
    """Default process/measurement noise for the rover pipeline.

    Velocity process noise must cover the real per-tick wheel acceleration
    (actuator lag can change v by ~0.3 m/s within one tick); values far
    below that make the chi-square gate lock out legitimate twist updates.
    """
    q_pos: float = 1e-8
    q_theta: float = 1e-8
    q_v: float = 0.5
    q_omega: float = 0.5
    r_twist_v: float = 1e-4
    r_twist_omega: float = 1e-4
    r_yaw_rate: float = 4e-6
    r_vo_pos: float = 4e-4
    r_vo_theta: float = 1e-4
    gate_chi2_enabled: bool = True

    def q(self, dt):
        return np.diag([self.q_pos, self.q_pos, self.q_theta,
                        self.q_v, self.q_omega]) * dt

    def r_twist(self):
        return np.diag([self.r_twist_v, self.r_twist_omega])

    def r_yaw(self):
        return np.array([[self.r_yaw_rate]])

    def r_vo(self):
        return np.diag([self.r_vo_pos, self.r_vo_pos, self.r_vo_theta])
