"""Stereo geometry, visual-odometry registration, and object detection.

Camera frame convention: x right (along the stereo baseline), y down,
z forward. The left/right cameras sit at x = -d and x = +d of the camera
base frame, so a point projects to

    u_L = f (x - d) / z,   u_R = f (x + d) / z,   v_L = v_R = f y / z

and triangulation inverts that exactly:

    z = 2 d f / (u_R - u_L),  x = (u_L z + d f) / f,  y = v_L z / f

The printed y-term of the source material's triangulation pair does not
invert any horizontal-baseline projection; y = v_L z / f is the form that
makes projection and triangulation mutual inverses and is what we use.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import world as worldmod
from .errors import (BehindCameraError, DegenerateGeometryError,
                     EstimationFailure, InsufficientFeaturesError)


@dataclass
class StereoSpec:
    f: float = 400.0            # focal length, pixels
    d: float = 0.1              # half-baseline, m
    image_half_width: float = 320.0
    image_half_height: float = 240.0
    noise_sigma: float = 0.0    # pixel noise applied by the sensor simulator
    max_range: float = 15.0

    def __post_init__(self):
        if self.f <= 0 or self.d <= 0:
            raise ValueError("focal length and half-baseline must be > 0")


@dataclass
class PixelPair:
    u_l: float
    v_l: float
    u_r: float
    v_r: float
    landmark_id: str = ""


@dataclass
class Point3:
    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.x, self.y, self.z])


@dataclass
class Detection:
    label: str       # cubesat | lander | rock
    bearing: float   # rad, + left of boresight
    elevation: float # rad, + above boresight
    range: float     # m


@dataclass
class DetectorConfig:
    max_range: float = 15.0
    fov: float = math.radians(60.0)
    p_detect: float = 0.9
    bearing_sigma: float = math.radians(1.0)
    range_sigma_frac: float = 0.02
    labels: tuple = ("cubesat", "lander")


@dataclass
class RansacConfig:
    iterations: int = 50
    inlier_threshold: float = 0.1
    min_points: int = 3


@dataclass
class RigidTransform:
    """Rigid motion: rotation matrix plus translation."""
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self):
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))


def project(p, spec):
    """Project a camera-base-frame point to a left/right pixel pair."""
    if p.z <= 0:
        raise BehindCameraError(f"point at z={p.z:.4f} is not in front of the camera")
    u_l = spec.f * (p.x - spec.d) / p.z
    u_r = spec.f * (p.x + spec.d) / p.z
    v = spec.f * p.y / p.z
    return PixelPair(u_l=u_l, v_l=v, u_r=u_r, v_r=v)


def triangulate(pair, spec):
    """Recover the camera-base-frame point from a stereo pixel pair."""
    disparity = pair.u_r - pair.u_l
    if disparity <= 0:
        raise DegenerateGeometryError(
            f"non-positive disparity {disparity:.6g}; geometry degenerate")
    z = 2.0 * spec.d * spec.f / disparity
    x = (pair.u_l * z + spec.d * spec.f) / spec.f
    y = pair.v_l * z / spec.f
    return Point3(x=x, y=y, z=z)


def _kabsch(src, dst):
    """Least-squares rigid fit dst ~= R src + t (centroid + SVD)."""
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    ref = np.diag([1.0, 1.0, sign])
    rot = vt.T @ ref @ u.T
    t = dc - rot @ sc
    return RigidTransform(rot, t)


def _collinear(points):
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[1] < 1e-9 * max(s[0], 1.0)


def estimate_motion(points_prev, points_curr, cfg=None, rng=None):
    """Estimate camera motion between two landmark sets matched by id.

    Fits the landmark map prev->curr with RANSAC over a closed-form rigid
    registration and refits on the inlier consensus. The returned transform
    T is the camera motion: for static landmarks p_curr = T^-1 p_prev.

    Returns (T, inlier_ids, residual_rms).
    """
    cfg = cfg or RansacConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    prev = {pid: p for pid, p in points_prev}
    shared = [pid for pid, _ in points_curr if pid in prev]
    if len(shared) < cfg.min_points:
        raise InsufficientFeaturesError(
            f"{len(shared)} shared landmarks; at least {cfg.min_points} required")
    curr = {pid: p for pid, p in points_curr}
    src = np.array([prev[pid].as_array() for pid in shared])
    dst = np.array([curr[pid].as_array() for pid in shared])
    if _collinear(src):
        raise InsufficientFeaturesError("shared landmarks are collinear")

    n = len(shared)
    best_inliers = None
    for _ in range(cfg.iterations):
        sample = rng.choice(n, size=cfg.min_points, replace=False)
        if _collinear(src[sample]):
            continue
        trial = _kabsch(src[sample], dst[sample])
        resid = np.linalg.norm(trial.apply(src) - dst, axis=1)
        inliers = resid < cfg.inlier_threshold
        if best_inliers is None or inliers.sum() > best_inliers.sum():
            best_inliers = inliers
    if best_inliers is None or best_inliers.sum() < cfg.min_points:
        raise InsufficientFeaturesError("RANSAC found no rigid consensus")
    if _collinear(src[best_inliers]):
        raise InsufficientFeaturesError("RANSAC consensus is collinear")

    fit = _kabsch(src[best_inliers], dst[best_inliers])
    resid = np.linalg.norm(fit.apply(src) - dst, axis=1)
    inlier_mask = resid < cfg.inlier_threshold
    rms = float(np.sqrt(np.mean(resid[inlier_mask] ** 2))) if inlier_mask.any() else float("inf")
    inlier_ids = [shared[i] for i in np.flatnonzero(inlier_mask)]
    # fit maps prev->curr coordinates; the camera moved by the inverse
    return fit.inverse(), inlier_ids, rms


@dataclass
class CameraPose:
    """World pose of the camera base frame (planar yaw plus mount pitch)."""
    position: np.ndarray  # (3,)
    yaw: float
    pitch: float = 0.0

    def rotation(self):
        """World-from-camera rotation (camera x right, y down, z forward)."""
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        # forward (z_cam), right (x_cam), down (y_cam) in world coordinates
        fwd = np.array([cy * cp, sy * cp, sp])
        right = np.array([sy, -cy, 0.0])
        down = np.cross(fwd, right)
        down /= np.linalg.norm(down)
        return np.column_stack([right, down, fwd])

    def world_to_camera(self, p_world):
        return self.rotation().T @ (np.asarray(p_world) - self.position)

    def camera_to_world(self, p_cam):
        return self.rotation() @ np.asarray(p_cam) + self.position


def _bearing_elevation_range(p_cam):
    rng = float(np.linalg.norm(p_cam))
    bearing = math.atan2(-p_cam[0], p_cam[2])    # + to the left
    elevation = math.atan2(-p_cam[1], math.hypot(p_cam[0], p_cam[2]))
    return bearing, elevation, rng


def detect_objects(world, camera_pose, cfg=None, rng=None):
    """Simulated geometric detector for salient world objects.

    Each configured target inside the range gate and field of view, with a
    clear line of sight, is reported with probability p_detect; bearing,
    elevation, and range carry Gaussian noise. One Bernoulli draw and one
    noise draw happen per candidate in a fixed order for determinism.
    """
    cfg = cfg or DetectorConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    targets = []
    if "cubesat" in cfg.labels:
        targets.append(("cubesat", np.asarray(world.cubesat_position, dtype=float)))
    if "lander" in cfg.labels:
        hx, hy, _ = world.home_base_pose
        hz = worldmod.height_at(world, hx, hy) + 1.0
        targets.append(("lander", np.array([hx, hy, hz])))

    detections = []
    for label, pos in targets:
        p_cam = camera_pose.world_to_camera(pos)
        bearing, elevation, dist = _bearing_elevation_range(p_cam)
        draw = rng.uniform()
        noise = rng.normal(size=3)
        if dist <= 1e-9 or dist > cfg.max_range:
            continue
        if abs(bearing) > cfg.fov / 2.0 or p_cam[2] <= 0:
            continue
        if not worldmod.los_clear(world, camera_pose.position, pos):
            continue  # occluded
        if draw > cfg.p_detect:
            continue
        detections.append(Detection(
            label=label,
            bearing=bearing + cfg.bearing_sigma * noise[0],
            elevation=elevation + cfg.bearing_sigma * noise[1],
            range=max(1e-6, dist * (1.0 + cfg.range_sigma_frac * noise[2])),
        ))
    return detections


def _detection_ray_point(pose, det):
    """Back-project a detection to a world point at its measured range."""
    cb, sb = math.cos(det.bearing), math.sin(det.bearing)
    ce, se = math.cos(det.elevation), math.sin(det.elevation)
    p_cam = np.array([-det.range * ce * sb, -det.range * se,
                      det.range * ce * cb])
    return pose.camera_to_world(p_cam)


def estimate_object_position(detections, max_iterations=20, tol=1e-9,
                             bearing_sigma=math.radians(1.0), range_sigma=0.1):
    """Gauss-Newton position fit over (bearing, elevation, range) residuals.

    detections: list of (CameraPose, Detection) from at least two distinct
    poses. Initialized from the first detection's back-projection.

    Returns (position, covariance).
    """
    if len(detections) < 2:
        raise InsufficientFeaturesError(
            "at least two detections from distinct poses are required")
    positions = np.array([pose.position for pose, _ in detections])
    if np.allclose(positions.max(axis=0), positions.min(axis=0), atol=1e-9):
        raise InsufficientFeaturesError("detections come from a single pose")

    w = np.array([1.0 / bearing_sigma, 1.0 / bearing_sigma, 1.0 / range_sigma])

    def residuals_and_jacobian(p):
        rows = []
        jac = []
        for pose, det in detections:
            p_cam = pose.world_to_camera(p)
            bearing, elevation, rng_pred = _bearing_elevation_range(p_cam)
            rows.append(np.array([bearing - det.bearing,
                                  elevation - det.elevation,
                                  rng_pred - det.range]) * w)
            jrow = np.zeros((3, 3))
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = 1e-7
                ba, ea, ra = _bearing_elevation_range(pose.world_to_camera(p + dp))
                bb, eb, rb = _bearing_elevation_range(pose.world_to_camera(p - dp))
                jrow[:, k] = (np.array([ba - bb, ea - eb, ra - rb]) * w) / 2e-7
            jac.append(jrow)
        return np.concatenate(rows), np.vstack(jac)

    x = _detection_ray_point(*detections[0])
    r, j = residuals_and_jacobian(x)
    cost = float(r @ r)
    converged = False
    for _ in range(max_iterations):
        step, *_ = np.linalg.lstsq(j, -r, rcond=None)
        if np.linalg.norm(step) < tol:
            converged = True
            break
        # accept only cost-decreasing steps; halve on overshoot
        accepted = False
        scale = 1.0
        for _ in range(8):
            x_new = x + scale * step
            r_new, j_new = residuals_and_jacobian(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                x, r, j, cost = x_new, r_new, j_new, cost_new
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            converged = True  # at a local minimum up to line-search resolution
            break
    if not converged:
        raise EstimationFailure("position fit did not converge "
                                f"(residual {cost:.3e})", residual=cost)
    jtj = j.T @ j
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.inf)
    return x, cov
