"""Four-wheel independently-steered rover: drive modes, stepping, sensors.

Wheel order is FL, FR, RL, RR at body positions (+L/2, +W/2), (+L/2, -W/2),
(-L/2, +W/2), (-L/2, -W/2). Wheel speed is limited to 1.5 m/s and steering
to +-90 degrees per wheel.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import world as worldmod
from .errors import DomainError, InfeasibleCommandError
from .geometry import integrate_arc, solve3, wrap_angle
from .perception import CameraPose, Point3, StereoSpec, project

MAX_WHEEL_SPEED = 1.5      # m/s, hardware limit
MAX_STEER = math.pi / 2    # rad, hardware limit

SKID = "skid"
ACKERMANN = "ackermann"
CRAB = "crab"
OMNI = "omni"


@dataclass
class LidarSpec:
    height: float = 0.35        # mount height above local terrain, m
    fov: float = math.radians(270.0)
    step: float = math.radians(1.0)
    max_range: float = 20.0

    @property
    def num_beams(self):
        return int(round(self.fov / self.step)) + 1


@dataclass
class RoverGeometry:
    wheelbase: float = 1.2
    track: float = 1.0
    wheel_radius: float = 0.25
    body_radius: float = 0.9      # planar collision circle
    body_clearance: float = 0.3
    lidar: LidarSpec = field(default_factory=LidarSpec)
    stereo: StereoSpec = field(default_factory=StereoSpec)
    stereo_forward: float = 0.4   # camera offset along body x
    stereo_height: float = 0.6

    def __post_init__(self):
        for name in ("wheelbase", "track", "wheel_radius", "body_radius",
                     "body_clearance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    def wheel_positions(self):
        hl, hw = self.wheelbase / 2.0, self.track / 2.0
        return np.array([[hl, hw], [hl, -hw], [-hl, hw], [-hl, -hw]])


@dataclass
class DriveCommand:
    mode: str
    v: float = 0.0        # skid/ackermann forward speed
    omega: float = 0.0    # skid/ackermann yaw rate, omni yaw rate
    speed: float = 0.0    # crab speed
    heading: float = 0.0  # crab heading
    vx: float = 0.0       # omni body-frame velocity
    vy: float = 0.0

    @staticmethod
    def stop():
        return DriveCommand(mode=SKID, v=0.0, omega=0.0)


@dataclass
class WheelSetpoints:
    steer: np.ndarray
    speed: np.ndarray


@dataclass
class RoverState:
    pose: tuple = (0.0, 0.0, 0.0)
    wheel_steer: np.ndarray = None
    wheel_speed: np.ndarray = None
    twist: tuple = (0.0, 0.0, 0.0)   # body-frame (vx, vy, omega)
    drive_mode: str = SKID

    def __post_init__(self):
        if self.wheel_steer is None:
            self.wheel_steer = np.zeros(4)
        if self.wheel_speed is None:
            self.wheel_speed = np.zeros(4)

    def copy(self):
        return RoverState(pose=tuple(self.pose),
                          wheel_steer=self.wheel_steer.copy(),
                          wheel_speed=self.wheel_speed.copy(),
                          twist=tuple(self.twist), drive_mode=self.drive_mode)


@dataclass
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_clamp: float = 1.0
    output_clamp: float = 10.0


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0


def pid_step(gains, setpoint, measured, state, dt):
    """One clamped PID step; pure function returning (output, new state)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    error = setpoint - measured
    integral = state.integral + error * dt
    integral = min(max(integral, -gains.integral_clamp), gains.integral_clamp)
    derivative = (error - state.prev_error) / dt
    out = gains.kp * error + gains.ki * integral + gains.kd * derivative
    out = min(max(out, -gains.output_clamp), gains.output_clamp)
    return out, PidState(integral=integral, prev_error=error)


def drive_ik(cmd, geom):
    """Per-wheel steer/speed setpoints realizing a drive command.

    Speeds exceeding the wheel limit are scaled down uniformly; steer
    demands beyond +-90 degrees are a geometry violation and raise.
    """
    pos = geom.wheel_positions()
    if cmd.mode == SKID:
        steer = np.zeros(4)
        # left wheels (+W/2) run v - omega*W/2, right wheels v + omega*W/2
        speed = cmd.v - cmd.omega * pos[:, 1]
    elif cmd.mode == CRAB:
        if not np.isfinite(cmd.heading) or abs(cmd.heading) > MAX_STEER + 1e-12:
            raise InfeasibleCommandError(
                f"crab heading {cmd.heading:.3f} exceeds +-pi/2 steering")
        steer = np.full(4, float(cmd.heading))
        speed = np.full(4, float(cmd.speed))
    elif cmd.mode == ACKERMANN:
        if abs(cmd.omega) < 1e-12:
            steer = np.zeros(4)
            speed = np.full(4, float(cmd.v))
        else:
            radius = cmd.v / cmd.omega
            if abs(radius) < geom.track / 2.0:
                raise InfeasibleCommandError(
                    f"turn radius {radius:.3f} smaller than half-track")
            # turn center on the body lateral axis at (0, R)
            steer = np.arctan2(pos[:, 0], radius - pos[:, 1])
            # negative R flips atan2 onto the rear-facing branch; fold back
            steer = np.where(steer > MAX_STEER, steer - math.pi, steer)
            steer = np.where(steer < -MAX_STEER, steer + math.pi, steer)
            dist = np.hypot(pos[:, 0], radius - pos[:, 1])
            # speeds proportional to each wheel's turn radius
            speed = cmd.v * dist / abs(radius)
    elif cmd.mode == OMNI:
        vel = np.column_stack([cmd.vx - cmd.omega * pos[:, 1],
                               cmd.vy + cmd.omega * pos[:, 0]])
        speed = np.hypot(vel[:, 0], vel[:, 1])
        steer = np.zeros(4)
        moving = speed > 1e-12
        steer[moving] = np.arctan2(vel[moving, 1], vel[moving, 0])
        # fold rear-half directions into +-pi/2 by reversing wheel spin
        for i in range(4):
            if steer[i] > MAX_STEER:
                steer[i] -= math.pi
                speed[i] = -speed[i]
            elif steer[i] < -MAX_STEER:
                steer[i] += math.pi
                speed[i] = -speed[i]
    else:
        raise InfeasibleCommandError(f"unknown drive mode '{cmd.mode}'")

    if not (np.all(np.isfinite(steer)) and np.all(np.isfinite(speed))):
        raise InfeasibleCommandError("non-finite drive command payload")
    if np.any(np.abs(steer) > MAX_STEER + 1e-9):
        raise InfeasibleCommandError("required steering exceeds +-pi/2")
    top = float(np.max(np.abs(speed)))
    if top > MAX_WHEEL_SPEED:
        speed = speed * (MAX_WHEEL_SPEED / top)
    return WheelSetpoints(steer=steer, speed=np.asarray(speed, dtype=float))


def twist_from_wheels(steer, speed, geom, mode):
    """Body twist (vx, vy, omega) consistent with the wheel states.

    Skid steering relies on lateral wheel slip, so its reconstruction uses
    the differential-drive relations; other modes solve the full
    least-squares system over all eight wheel contact constraints.
    """
    pos = geom.wheel_positions()
    if mode == SKID:
        left = 0.5 * (speed[0] + speed[2])
        right = 0.5 * (speed[1] + speed[3])
        return (0.5 * (left + right), 0.0, (right - left) / geom.track)
    if mode == CRAB:
        s = float(np.mean(speed))
        heading = float(steer[0])
        return (s * math.cos(heading), s * math.sin(heading), 0.0)
    # general least squares: wheel velocity = (vx - omega*py, vy + omega*px)
    a = np.zeros((8, 3))
    b = np.zeros(8)
    for i in range(4):
        ci, si = math.cos(steer[i]), math.sin(steer[i])
        a[2 * i] = (1.0, 0.0, -pos[i, 1])
        b[2 * i] = speed[i] * ci
        a[2 * i + 1] = (0.0, 1.0, pos[i, 0])
        b[2 * i + 1] = speed[i] * si
    sol = solve3(a.T @ a, a.T @ b)
    return (float(sol[0]), float(sol[1]), float(sol[2]))


@dataclass
class SlipConfig:
    k: float = 0.5        # slip per unit terrain gradient magnitude
    max_slip: float = 0.6

    def slip_at(self, world, x, y):
        if not world.heightfield.contains(x, y):
            return 0.0
        gx, gy = worldmod.terrain_gradient(world, x, y)
        return min(self.k * math.hypot(gx, gy), self.max_slip)


@dataclass
class ActuatorConfig:
    tau: float = 0.2      # first-order lag time constant, s
    instant: bool = False  # bypass dynamics (kinematic oracle mode)


@dataclass
class StepResult:
    state: "RoverState"
    collided: bool = False
    slip: float = 0.0
    encoder_increments: np.ndarray = None  # wheel rotation, rad, pre-noise


def step_vehicle(state, setpoints, geom, world, slip_cfg, dt,
                 actuator=None):
    """Advance the rover one step toward the wheel setpoints.

    Wheels follow a first-order lag (or jump instantly in oracle mode),
    the body twist comes from the mode-aware wheel reconstruction, slip
    scales ground displacement by (1 - s), and the pose integrates along
    an exact arc. A body circle intersecting a rock reverts the pose to
    the contact point and flags a collision.
    """
    if not (0.0 < dt <= 0.1):
        raise ValueError("dt must be in (0, 0.1]")
    actuator = actuator or ActuatorConfig()
    new = state.copy()
    if actuator.instant or actuator.tau <= 1e-9:
        new.wheel_steer = np.clip(setpoints.steer, -MAX_STEER, MAX_STEER)
        new.wheel_speed = np.clip(setpoints.speed, -MAX_WHEEL_SPEED,
                                  MAX_WHEEL_SPEED)
    else:
        alpha = 1.0 - math.exp(-dt / actuator.tau)
        new.wheel_steer = np.clip(
            state.wheel_steer + alpha * (setpoints.steer - state.wheel_steer),
            -MAX_STEER, MAX_STEER)
        new.wheel_speed = np.clip(
            state.wheel_speed + alpha * (setpoints.speed - state.wheel_speed),
            -MAX_WHEEL_SPEED, MAX_WHEEL_SPEED)

    encoder_increments = new.wheel_speed * dt / geom.wheel_radius

    x, y, _ = state.pose
    s = (slip_cfg.slip_at(world, x, y)
         if slip_cfg is not None and world is not None else 0.0)
    vx, vy, om = twist_from_wheels(new.wheel_steer, new.wheel_speed * (1.0 - s),
                                   geom, state.drive_mode)
    new.twist = (vx, vy, om)
    new.pose = integrate_arc(state.pose, vx, vy, om, dt)
    if world is not None:
        # the heightfield edge acts as a hard world boundary
        cx, cy = worldmod.clamp_to_bounds(world, new.pose[0], new.pose[1],
                                          margin=0.1)
        if cx != new.pose[0] or cy != new.pose[1]:
            new.pose = (cx, cy, new.pose[2])
            new.twist = (0.0, 0.0, 0.0)

    collided = False
    if world is not None and world.rocks:
        if _body_hits_rock(new.pose, geom, world):
            collided = True
            lo, hi = 0.0, 1.0
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                pose_mid = _interp_pose(state.pose, new.pose, mid)
                if _body_hits_rock(pose_mid, geom, world):
                    hi = mid
                else:
                    lo = mid
            new.pose = _interp_pose(state.pose, new.pose, lo)
            new.twist = (0.0, 0.0, 0.0)
    return StepResult(state=new, collided=collided, slip=s,
                      encoder_increments=encoder_increments)


def _interp_pose(a, b, frac):
    return (a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1]),
            wrap_angle(a[2] + frac * wrap_angle(b[2] - a[2])))


def _body_hits_rock(pose, geom, world):
    if not world.rocks:
        return False
    d = np.hypot(world._rock_centers[:, 0] - pose[0],
                 world._rock_centers[:, 1] - pose[1])
    return bool(np.any(d < geom.body_radius + world._rock_radii))


@dataclass
class NoiseConfig:
    lidar_range_sigma: float = 0.02
    gyro_sigma: float = 0.002
    gyro_bias: float = 0.0
    accel_sigma: float = 0.05
    encoder_sigma: float = 0.0
    pixel_sigma: float = 0.3

    @staticmethod
    def zero():
        return NoiseConfig(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class LidarScan:
    start_angle: float   # body-relative angle of the first beam
    angular_step: float
    ranges: np.ndarray   # inf marks no-return


@dataclass
class ImuReading:
    gyro_z: float
    accel: tuple


@dataclass
class StereoFrame:
    pairs: list          # PixelPair with landmark ids


@dataclass
class SensorBundle:
    lidar: LidarScan | None
    imu: ImuReading
    encoders: np.ndarray
    stereo: StereoFrame | None


def _body_attitude(world, pose):
    """Kinematic pitch/roll from the terrain gradient under the body."""
    x, y = worldmod.clamp_to_bounds(world, pose[0], pose[1], margin=1e-6)
    gx, gy = worldmod.terrain_gradient(world, x, y)
    c, s = math.cos(pose[2]), math.sin(pose[2])
    slope_fwd = gx * c + gy * s
    slope_lat = -gx * s + gy * c
    return math.atan(slope_fwd), math.atan(slope_lat)


def _body_rotation(yaw, pitch, roll):
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def lidar_world_pose(world, pose, geom):
    qx, qy = worldmod.clamp_to_bounds(world, pose[0], pose[1], margin=1e-6)
    z = worldmod.height_at(world, qx, qy) + geom.lidar.height
    return np.array([pose[0], pose[1], z])


def camera_world_pose(world, pose, geom):
    c, s = math.cos(pose[2]), math.sin(pose[2])
    x = pose[0] + c * geom.stereo_forward
    y = pose[1] + s * geom.stereo_forward
    qx, qy = worldmod.clamp_to_bounds(world, pose[0], pose[1], margin=1e-6)
    z = worldmod.height_at(world, qx, qy) + geom.stereo_height
    return CameraPose(position=np.array([x, y, z]), yaw=pose[2])


def _simulate_lidar(world, pose, geom, noise, rng):
    spec = geom.lidar
    origin = lidar_world_pose(world, pose, geom)
    pitch, roll = _body_attitude(world, pose)
    rot = _body_rotation(pose[2], -pitch, roll)  # +pitch raises the nose
    angles = -spec.fov / 2.0 + spec.step * np.arange(spec.num_beams)
    dirs_body = np.column_stack([np.cos(angles), np.sin(angles),
                                 np.zeros_like(angles)])
    dirs = dirs_body @ rot.T
    ranges, _ = worldmod.raycast_fan(world, origin, dirs, spec.max_range)
    hit = np.isfinite(ranges)
    if noise.lidar_range_sigma > 0:
        ranges = ranges.copy()
        ranges[hit] += noise.lidar_range_sigma * rng.standard_normal(hit.sum())
        ranges[hit] = np.maximum(ranges[hit], 1e-6)
    return LidarScan(start_angle=float(angles[0]), angular_step=spec.step,
                     ranges=ranges)


def _landmark_catalog(world):
    """Persistent landmark ids, positions, and owning rock index (or None)."""
    items = []
    for i, r in enumerate(world.rocks):
        summit = r.center + np.array([0.0, 0.0, r.radius])
        items.append((f"rock:{i}", summit, i))
    items.append(("cubesat", np.asarray(world.cubesat_position, dtype=float),
                  None))
    hx, hy, _ = world.home_base_pose
    hz = worldmod.height_at(world, hx, hy) + 1.0
    items.append(("home", np.array([hx, hy, hz]), None))
    for i, p in enumerate(world.feature_points):
        items.append((f"feat:{i}", p, None))
    return items


def _simulate_stereo(world, pose, geom, noise, rng):
    cam = camera_world_pose(world, pose, geom)
    spec = geom.stereo
    pairs = []
    for lid, p_world, own_rock in _landmark_catalog(world):
        p_cam = cam.world_to_camera(p_world)
        if p_cam[2] <= 0.2:
            continue
        dist = float(np.linalg.norm(p_cam))
        if dist > spec.max_range:
            continue
        pp = project(Point3(*p_cam), spec)
        if (abs(pp.u_l) > spec.image_half_width
                or abs(pp.u_r) > spec.image_half_width
                or abs(pp.v_l) > spec.image_half_height):
            continue
        if not worldmod.los_clear(world, cam.position, p_world,
                                  exclude_rock=own_rock):
            continue
        if noise.pixel_sigma > 0:
            n = noise.pixel_sigma * rng.standard_normal(3)
            pp.u_l += n[0]
            pp.u_r += n[1]
            pp.v_l += n[2]
            pp.v_r = pp.v_l
        pp.landmark_id = lid
        pairs.append(pp)
    return StereoFrame(pairs=pairs)


def simulate_sensors(world, true_state, geom, noise_cfg, rng, dt,
                     prev_twist=(0.0, 0.0, 0.0), encoder_increments=None,
                     include_lidar=True, include_stereo=True):
    """Simulate one sensor snapshot from the true state.

    Draw order per call is fixed (lidar, gyro, accel, encoders, stereo) so
    runs are reproducible.  Encoder increments default to the commanded
    wheel rotation (speed * dt / wheel_radius), which already includes the
    slip discrepancy relative to true ground displacement.
    """
    lidar = (_simulate_lidar(world, true_state.pose, geom, noise_cfg, rng)
             if include_lidar else None)
    vx, vy, om = true_state.twist
    gyro = om + noise_cfg.gyro_bias
    if noise_cfg.gyro_sigma > 0:
        gyro += noise_cfg.gyro_sigma * rng.standard_normal()
    ax = (vx - prev_twist[0]) / dt
    ay = (vy - prev_twist[1]) / dt
    if noise_cfg.accel_sigma > 0:
        ax += noise_cfg.accel_sigma * rng.standard_normal()
        ay += noise_cfg.accel_sigma * rng.standard_normal()
    if encoder_increments is None:
        encoder_increments = true_state.wheel_speed * dt / geom.wheel_radius
    enc = np.asarray(encoder_increments, dtype=float).copy()
    if noise_cfg.encoder_sigma > 0:
        enc += noise_cfg.encoder_sigma * rng.standard_normal(4)
    stereo = (_simulate_stereo(world, true_state.pose, geom, noise_cfg, rng)
              if include_stereo else None)
    return SensorBundle(lidar=lidar, imu=ImuReading(gyro_z=gyro, accel=(ax, ay)),
                        encoders=enc, stereo=stereo)
