"""Per-rover autonomy pipeline: truth stepping, sensing, fusion, mapping.

One pipeline instance owns the true rover state, the EKF belief, the
occupancy grid, and the telemetry stream for a mission. The mission
executor drives it with one DriveCommand per tick; everything downstream
(sensor simulation, odometry/IMU/VO fusion, scan integration) happens here
in a fixed order so runs are reproducible tick for tick.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import world as worldmod
from .arm import ArmParams
from .geometry import wrap_angle
from .localization import (IMU_YAW_RATE, WHEEL_TWIST, BeliefState, EkfConfig,
                           MeasurementModel, ekf_predict, ekf_update,
                           vo_delta_to_pose_measurement)
from .mapping import OccupancyGrid, SensorModel, inflate, integrate_points, \
    integrate_scan
from .perception import (RansacConfig, estimate_motion, triangulate)
from .planning import DwaConfig, RecoveryConfig, RrtConfig
from .vehicle import (ActuatorConfig, DriveCommand, NoiseConfig, RoverGeometry,
                      RoverState, SlipConfig, camera_world_pose, drive_ik,
                      simulate_sensors, step_vehicle, twist_from_wheels)


@dataclass
class StackConfig:
    """Everything the autonomy stack needs beyond the world itself."""
    geom: RoverGeometry = field(default_factory=RoverGeometry)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    slip: SlipConfig = field(default_factory=SlipConfig)
    actuator: ActuatorConfig = field(default_factory=ActuatorConfig)
    arm: ArmParams = field(default_factory=lambda: ArmParams(mount=(0.3, 0.0, 0.5)))
    ekf: EkfConfig = field(default_factory=EkfConfig)
    sensor_model: SensorModel = field(default_factory=SensorModel)
    dwa: DwaConfig = field(default_factory=DwaConfig)
    rrt: RrtConfig = field(default_factory=RrtConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    dt: float = 0.05
    lidar_every: int = 4        # ticks between lidar scans / map updates
    stereo_every: int = 10      # ticks between stereo frames (VO rate)
    control_every: int = 4      # ticks between local-planner updates
    robot_radius: float = 0.9
    inflation_decay: float = 0.5
    unknown_cost: float = 20.0


class RoverPipeline:
    def __init__(self, world, cfg, rng, start_pose=(0.0, 0.0, 0.0)):
        self.world = world
        self.cfg = cfg
        self.rng = rng
        self.truth = RoverState(pose=tuple(start_pose))
        self.belief = BeliefState.initial(start_pose, vel_var=1.0)
        hf = world.heightfield
        x0, y0, x1, y1 = hf.bounds
        self.grid = OccupancyGrid.blank(
            origin=(x0, y0), resolution=hf.cell_size,
            shape=(int(round((y1 - y0) / hf.cell_size)),
                   int(round((x1 - x0) / hf.cell_size))))
        self._costmap = None
        self.tick = 0
        self.time = 0.0
        self.events = []           # events of the current tick
        self.telemetry = []
        self.prev_twist = (0.0, 0.0, 0.0)
        self._vo_prev_points = None
        self._vo_anchor = None
        self.active_state = ""
        self.wheel_setpoints = None
        self.arm_q = None
        self.collisions = 0

    # -- costmap ---------------------------------------------------------

    def costmap(self):
        if self._costmap is None:
            self._costmap = inflate(self.grid, self.cfg.robot_radius,
                                    self.cfg.inflation_decay,
                                    self.cfg.sensor_model)
        return self._costmap

    # -- per-tick stepping -------------------------------------------------

    def step(self, cmd=None):
        """Advance one tick under the given drive command (None = hold)."""
        cfg = self.cfg
        cmd = cmd or DriveCommand.stop()
        self.events = []
        self.truth.drive_mode = cmd.mode
        setpoints = drive_ik(cmd, cfg.geom)
        self.wheel_setpoints = setpoints
        res = step_vehicle(self.truth, setpoints, cfg.geom, self.world,
                           cfg.slip, cfg.dt, actuator=cfg.actuator)
        self.truth = res.state
        if res.collided:
            self.collisions += 1
            self.events.append({"kind": "collision",
                                "pose": [round(p, 6) for p in self.truth.pose]})

        include_lidar = (self.tick % cfg.lidar_every) == 0
        include_stereo = (self.tick % cfg.stereo_every) == 0
        bundle = simulate_sensors(self.world, self.truth, cfg.geom, cfg.noise,
                                  self.rng, cfg.dt, prev_twist=self.prev_twist,
                                  encoder_increments=res.encoder_increments,
                                  include_lidar=include_lidar,
                                  include_stereo=include_stereo)
        self.prev_twist = self.truth.twist

        # fusion: odometry twist and gyro for this step, then predict
        speeds = bundle.encoders * cfg.geom.wheel_radius / cfg.dt
        twist = twist_from_wheels(self.truth.wheel_steer, speeds, cfg.geom,
                                  cmd.mode)
        zt = MeasurementModel(kind=WHEEL_TWIST, value=[twist[0], twist[2]],
                              noise=cfg.ekf.r_twist())
        self.belief, _ = ekf_update(self.belief, zt)
        zg = MeasurementModel(kind=IMU_YAW_RATE, value=[bundle.imu.gyro_z],
                              noise=cfg.ekf.r_yaw())
        self.belief, _ = ekf_update(self.belief, zg)
        self.belief = ekf_predict(self.belief, cfg.dt, cfg.ekf.q(cfg.dt))

        if include_stereo and bundle.stereo is not None:
            self._visual_odometry(bundle.stereo)
        if include_lidar and bundle.lidar is not None:
            est = self.belief.pose
            self.grid = integrate_scan(self.grid, est, bundle.lidar,
                                       cfg.sensor_model,
                                       max_range=cfg.geom.lidar.max_range)
            self._costmap = None

        self.tick += 1
        self.time = self.tick * cfg.dt
        self._record_telemetry(cmd)
        return self.events

    def _visual_odometry(self, frame):
        cfg = self.cfg
        points = []
        for pp in frame.pairs:
            if pp.u_r - pp.u_l <= 0:
                continue
            points.append((pp.landmark_id, triangulate(pp, cfg.geom.stereo)))
        if self._vo_prev_points is not None:
            try:
                cam_motion, inliers, rms = estimate_motion(
                    self._vo_prev_points, points, cfg.ransac, self.rng)
            except Exception:
                cam_motion = None
            if cam_motion is not None:
                delta = self._camera_to_body_delta(cam_motion)
                z = vo_delta_to_pose_measurement(delta, self._vo_anchor,
                                                 cfg.ekf.r_vo())
                self.belief, _ = ekf_update(self.belief, z)
        if points:
            # rock-height stereo points feed the occupancy grid
            self._integrate_stereo_points(points)
        self._vo_prev_points = points
        self._vo_anchor = self.belief.pose

    def _integrate_stereo_points(self, points):
        cfg = self.cfg
        est_cam = camera_world_pose(self.world, self.belief.pose, cfg.geom)
        world_pts = [est_cam.camera_to_world(p.as_array()) for _, p in points]

        def ground(x, y):
            hf = self.world.heightfield
            if not hf.contains(x, y):
                return 0.0
            return float(worldmod._height_many(hf, np.array([x]),
                                               np.array([y]))[0])

        est = self.belief.pose
        self.grid = integrate_points(self.grid, est, world_pts,
                                     cfg.sensor_model, ground_height=ground)
        self._costmap = None

    def _camera_to_body_delta(self, cam_motion):
        """Map estimated camera motion to a planar body pose delta."""
        geom = self.cfg.geom
        # camera axes in body frame: x_cam = -y_b, y_cam = -z_b, z_cam = +x_b
        r_bc = np.array([[0.0, 0.0, 1.0],
                         [-1.0, 0.0, 0.0],
                         [0.0, -1.0, 0.0]])
        p_bc = np.array([geom.stereo_forward, 0.0, geom.stereo_height])
        rot_b = r_bc @ cam_motion.rotation @ r_bc.T
        t_b = r_bc @ cam_motion.translation + p_bc - rot_b @ p_bc
        dth = math.atan2(rot_b[1, 0], rot_b[0, 0])
        return (float(t_b[0]), float(t_b[1]), float(dth))

    # -- queries -----------------------------------------------------------

    def est_pose(self):
        return self.belief.pose

    def true_pose(self):
        return self.truth.pose

    def est_camera_pose(self):
        return camera_world_pose(self.world, self.belief.pose, self.cfg.geom)

    def true_camera_pose(self):
        return camera_world_pose(self.world, self.truth.pose, self.cfg.geom)

    def sense_volatiles(self):
        return worldmod.sense_volatiles(
            self.world, self.truth.pose[:2],
            self.world.config.volatile_sensor_radius)

    def add_event(self, kind, **data):
        self.events.append({"kind": kind, **data})

    def _record_telemetry(self, cmd):
        tp = self.truth.pose
        ep = self.belief.pose
        row = {
            "t": round(self.time, 6),
            "true": [round(tp[0], 6), round(tp[1], 6), round(tp[2], 6)],
            "est": [round(ep[0], 6), round(ep[1], 6), round(ep[2], 6)],
            "cov_trace": round(float(np.trace(self.belief.covariance)), 9),
            "state": self.active_state,
            "mode": cmd.mode,
            "steer": [round(float(s), 6) for s in self.truth.wheel_steer],
            "speed": [round(float(s), 6) for s in self.truth.wheel_speed],
            "arm_q": ([round(float(q), 6) for q in self.arm_q]
                      if self.arm_q is not None else None),
            "events": self.events,
        }
        self.telemetry.append(row)
