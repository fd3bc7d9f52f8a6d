"""Mission executors for the three qualification tasks, plus the scorer.

Task 1 (resource_localization): sweep a coverage pattern with the volatile
sensor, break off into a short S-jink on each new signal to de-alias the
range-only trilateration, and report (position, type) claims.

Task 2 (resource_collection): drive to a given deposit, align, and run
scoop cycles until the required mass sits in the hauler bin.

Task 3 (self_localization): sweep until the object detector fires, gather
detections from several poses, fit the object position, report it, and
drive home.

All driving runs on the EKF pose; ground truth is touched only inside the
sensor simulation and the scorer.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import world as worldmod
from .arm import (ArmJointState, MaterialBin, ScoopState, plan_scoop_cycle,
                  step_arm)
from .errors import InvalidEndpointError, SimError
from .geometry import wrap_angle
from .perception import DetectorConfig, detect_objects, estimate_object_position
from .planning import (CoverageRegion, Path, dwa_step, plan_astar,
                       plan_coverage, recovery_rotate)
from .statemachine import State, sm_build, sm_execute
from .vehicle import SKID, DriveCommand

TASK_RESOURCE_LOCALIZATION = "resource_localization"
TASK_RESOURCE_COLLECTION = "resource_collection"
TASK_SELF_LOCALIZATION = "self_localization"


@dataclass
class MissionConfig:
    task: str = TASK_RESOURCE_LOCALIZATION
    budget_s: float = 600.0
    required_mass: float | None = None    # task 2; None = full deposit
    deposit_index: int = 0
    coverage_region: CoverageRegion | None = None  # None = world rock box
    coverage_footprint: float = 3.5
    search_footprint: float = 9.0         # task 3 sparse sweep
    standoff: float = 2.1
    bin_offset: float = 2.6
    scoop_capacity: float | None = None   # None = half the smallest deposit
    arm_gains: tuple = (6.0, 0.0, 0.0)
    home_tolerance: float = 3.0
    match_tolerance: float = 2.0
    capture_radius: float = 1.0
    goal_tolerance: float = 0.8
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    min_detections: int = 3
    detection_spacing: float = 1.0


@dataclass
class MissionReport:
    task: str
    claims: list = field(default_factory=list)      # (x, y, type_label)
    collected: dict = field(default_factory=dict)   # deposit id -> kg in bin
    object_claim: list | None = None                # [x, y, z]
    returned_home: bool = False
    elapsed: float = 0.0
    outcome: str = ""
    final_true_pose: list = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def to_dict(self):
        return {
            "task": self.task,
            "claims": [{"x": round(float(x), 6), "y": round(float(y), 6),
                        "type": t} for x, y, t in self.claims],
            "collected": {str(k): round(float(v), 9)
                          for k, v in sorted(self.collected.items())},
            "object": ([round(float(v), 6) for v in self.object_claim]
                       if self.object_claim is not None else None),
            "returned_home": bool(self.returned_home),
            "elapsed": round(float(self.elapsed), 6),
            "outcome": self.outcome,
            "final_true_pose": [round(float(v), 6)
                                for v in self.final_true_pose],
        }


@dataclass
class Score:
    task: str
    recall: float | None = None
    mean_error: float | None = None
    type_accuracy: float | None = None
    collected_fraction: float | None = None
    object_error: float | None = None
    home_success: bool | None = None
    composite: float = 0.0

    def to_dict(self):
        def r(v):
            return None if v is None else round(float(v), 6)
        return {"task": self.task, "recall": r(self.recall),
                "mean_error": r(self.mean_error),
                "type_accuracy": r(self.type_accuracy),
                "collected_fraction": r(self.collected_fraction),
                "object_error": r(self.object_error),
                "home_success": self.home_success,
                "composite": r(self.composite)}


def trilaterate(samples, iterations=25, tol=1e-10):
    """Least-squares circle-center fit from (x, y, range) samples."""
    samples = [(float(x), float(y), float(r)) for x, y, r in samples]
    best = min(samples, key=lambda s: s[2])
    p = np.array([best[0], best[1]])
    for _ in range(iterations):
        resid = []
        jac = []
        for x, y, r in samples:
            d = math.hypot(p[0] - x, p[1] - y)
            resid.append(d - r)
            if d < 1e-9:
                jac.append([0.0, 0.0])
            else:
                jac.append([(p[0] - x) / d, (p[1] - y) / d])
        step, *_ = np.linalg.lstsq(np.asarray(jac), -np.asarray(resid),
                                   rcond=None)
        p = p + step
        if np.linalg.norm(step) < tol:
            break
    return float(p[0]), float(p[1])


def nearest_free(costmap, xy, max_radius=5.0):
    """Center of the nearest traversable cell (ring search)."""
    i0, j0 = costmap.cell_of(xy[0], xy[1])
    rmax = int(max_radius / costmap.resolution)
    best = None
    for radius in range(rmax + 1):
        for dj in range(-radius, radius + 1):
            for di in range(-radius, radius + 1):
                if max(abs(di), abs(dj)) != radius:
                    continue
                i, j = i0 + di, j0 + dj
                if costmap.in_bounds(i, j) and not costmap.is_blocked(i, j):
                    d = di * di + dj * dj
                    if best is None or d < best[0]:
                        best = (d, i, j)
        if best is not None:
            return costmap.center_of(best[1], best[2])
    return None


class PathFollower:
    """Carrot-style path tracking with DWA, recovery, and replan requests."""

    def __init__(self, pipe, path, cfg, mission_cfg, window=60):
        self.pipe = pipe
        self.path = path
        self.cfg = cfg
        self.mcfg = mission_cfg
        self.wp = 0
        self.window = window
        self.held = DriveCommand.stop()
        self.recovery = []
        self.failures = 0
        self._since_control = cfg.control_every  # force an immediate plan

    def _advance_waypoint(self, pose):
        pts = self.path.poses
        hi = min(self.wp + self.window, len(pts))
        d = [math.hypot(p[0] - pose[0], p[1] - pose[1])
             for p in pts[self.wp:hi]]
        k = int(np.argmin(d))
        self.wp += k
        while (self.wp + 1 < len(pts)
               and math.hypot(pts[self.wp][0] - pose[0],
                              pts[self.wp][1] - pose[1])
               < self.mcfg.capture_radius):
            self.wp += 1

    def tick(self):
        """One sim tick of driving. None while en route; 'arrived',
        'blocked' (replan wanted), or 'stuck' otherwise."""
        pipe = self.pipe
        pose = pipe.est_pose()
        end = self.path.poses[-1]
        if math.hypot(end[0] - pose[0], end[1] - pose[1]) \
                <= self.mcfg.goal_tolerance:
            pipe.step(DriveCommand.stop())
            return "arrived"
        if self.recovery:
            cmd = self.recovery.pop(0)
            events = pipe.step(DriveCommand(mode=SKID, v=cmd.v,
                                            omega=cmd.omega))
            if not self.recovery:
                return "blocked"
            return None
        self._advance_waypoint(pose)
        self._since_control += 1
        if self._since_control >= self.cfg.control_every:
            self._since_control = 0
            sub = Path(poses=self.path.poses[self.wp:], cost=0.0)
            if len(sub.poses) == 0:
                sub = Path(poses=[end], cost=0.0)
            local = pipe.costmap().window(pose[:2], 6.0)
            twist = (pipe.belief.mean[3], 0.0, pipe.belief.mean[4])
            out = dwa_step(local, pose, twist, sub, self.cfg.dwa)
            if out is None:
                self.failures += 1
                if self.failures >= 5:
                    pipe.step(DriveCommand.stop())
                    return "stuck"
                self.recovery = list(recovery_rotate(pose, self.cfg.recovery))
                pipe.step(DriveCommand.stop())
                return None
            self.failures = 0
            self.held = DriveCommand(mode=SKID, v=out[0].v, omega=out[0].omega)
        events = pipe.step(self.held)
        if any(e["kind"] == "collision" for e in events):
            # back off briefly, then rotate and ask for a new plan
            self.recovery = ([DriveCommand(mode=SKID, v=-0.3, omega=0.0)] * 20
                             + list(recovery_rotate(pose, self.cfg.recovery)))
        return None


def plan_to(pipe, cfg, goal_xy, goal_theta=None):
    """Fresh A* plan from the estimated pose to (a free cell near) a goal."""
    cm = pipe.costmap()
    start = pipe.est_pose()
    goal = nearest_free(cm, goal_xy)
    if goal is None:
        return None
    target = goal + ((goal_theta,) if goal_theta is not None else ())
    try:
        return plan_astar(cm, start[:2], target, unknown_cost=cfg.unknown_cost)
    except InvalidEndpointError:
        return None


class DriveTo(State):
    """Drive to a goal point with bounded replanning."""

    def __init__(self, pipe, cfg, mcfg, goal_xy, label):
        self.pipe, self.cfg, self.mcfg = pipe, cfg, mcfg
        self.goal_xy = goal_xy
        self.label = label
        self.follower = None
        self.replans = 0

    def goal(self):
        return self.goal_xy

    def on_enter(self, ctx):
        self.pipe.active_state = self.label
        self.follower = None
        self.replans = 0

    def tick(self, ctx):
        if self.follower is None:
            path = plan_to(self.pipe, self.cfg, self.goal())
            if path is None:
                self.pipe.step(DriveCommand.stop())
                self.replans += 1
                return "unreachable" if self.replans > 3 else None
            self.follower = PathFollower(self.pipe, path, self.cfg, self.mcfg)
        out = self.follower.tick()
        if out == "arrived":
            return "arrived"
        if out in ("blocked", "stuck"):
            self.follower = None
            self.replans += 1
            if self.replans > 8:
                return "unreachable"
        return None


class AlignTo(State):
    """Rotate in place until the body faces a target point."""

    def __init__(self, pipe, target_xy, label, tol=0.06):
        self.pipe, self.target_xy, self.label, self.tol = pipe, target_xy, \
            label, tol

    def on_enter(self, ctx):
        self.pipe.active_state = self.label

    def tick(self, ctx):
        x, y, th = self.pipe.est_pose()
        bearing = math.atan2(self.target_xy[1] - y, self.target_xy[0] - x)
        err = wrap_angle(bearing - th)
        if abs(err) < self.tol:
            self.pipe.step(DriveCommand.stop())
            return "aligned"
        omega = max(-0.8, min(0.8, 2.0 * err))
        self.pipe.step(DriveCommand(mode=SKID, v=0.0, omega=omega))
        return None


# ---------------------------------------------------------------------------
# Task 1: resource localization


class CoverageSweep(State):
    """Follow a coverage path; jink and trilaterate on volatile hits."""

    def __init__(self, pipe, cfg, mcfg, ctx):
        self.pipe, self.cfg, self.mcfg, self.mctx = pipe, cfg, mcfg, ctx
        self.follower = None
        self.plan = None
        self.samples = {}
        self.claimed = set()
        self.types = {}
        self.jink = []
        self.replans = 0

    def on_enter(self, ctx):
        self.pipe.active_state = "coverage_sweep"

    def _ensure_plan(self):
        if self.follower is not None:
            return True
        region = self.mcfg.coverage_region or _default_region(self.pipe.world)
        plan = plan_coverage(region, self.mcfg.coverage_footprint,
                             self.pipe.costmap(),
                             start=self.pipe.est_pose()[:2], topup=False)
        if len(plan.path.poses) == 0:
            return False
        self.plan = plan
        self.follower = PathFollower(self.pipe, plan.path, self.cfg, self.mcfg)
        return True

    def _collect(self):
        x, y, _ = self.pipe.est_pose()
        for dep_id, label, rng in self.pipe.sense_volatiles():
            if dep_id in self.claimed:
                continue
            first = dep_id not in self.samples
            self.samples.setdefault(dep_id, []).append((x, y, rng))
            self.types[dep_id] = label
            if first and not self.jink:
                # S-curve off the row breaks range-only mirror ambiguity
                self.jink = ([DriveCommand(mode=SKID, v=0.5, omega=0.6)] * 40
                             + [DriveCommand(mode=SKID, v=0.5, omega=-0.6)] * 40)

    def _try_claim(self, dep_id, min_samples=10):
        pts = self.samples.get(dep_id, [])
        if len(pts) < min_samples:
            return False
        arr = np.asarray(pts)[:, :2]
        spread = np.linalg.svd(arr - arr.mean(axis=0),
                               compute_uv=False)
        if len(spread) < 2 or spread[1] < 0.25:
            return False
        x, y = trilaterate(pts)
        self.mctx.claims.append((x, y, self.types[dep_id]))
        self.claimed.add(dep_id)
        self.pipe.add_event("claim", deposit=dep_id,
                            x=round(x, 6), y=round(y, 6),
                            type=self.types[dep_id])
        return True

    def tick(self, ctx):
        if not self._ensure_plan():
            self.pipe.step(DriveCommand.stop())
            self.replans += 1
            return "done" if self.replans > 3 else None
        if self.jink:
            self.pipe.step(self.jink.pop(0))
        else:
            out = self.follower.tick()
            if out == "arrived":
                self._finalize()
                return "done"
            if out in ("blocked", "stuck"):
                self.follower = None
                self.replans += 1
                if self.replans > 8:
                    self._finalize()
                    return "done"
        self._collect()
        for dep_id in list(self.samples):
            if dep_id not in self.claimed:
                self._try_claim(dep_id)
        return None

    def _finalize(self):
        # claim anything with enough samples even if the jink was cut short
        for dep_id in list(self.samples):
            if dep_id not in self.claimed and len(self.samples[dep_id]) >= 3:
                x, y = trilaterate(self.samples[dep_id])
                self.mctx.claims.append((x, y, self.types[dep_id]))
                self.claimed.add(dep_id)


def _default_region(world):
    bx, by = world.config.box_extent
    return CoverageRegion(origin=(-bx / 2.0, -by / 2.0), extent=(bx, by))


# ---------------------------------------------------------------------------
# Task 2: resource collection


class Excavate(State):
    """Run scoop cycles until the required mass is in the bin."""

    def __init__(self, pipe, cfg, mcfg, ctx, deposit):
        self.pipe, self.cfg, self.mcfg, self.mctx = pipe, cfg, mcfg, ctx
        self.deposit = deposit
        self.trajs = None
        self.traj_idx = 0
        self.t_local = 0.0
        self.arm_state = None
        self.material_bin = MaterialBin()
        self.scoop = None
        self.required = None

    def on_enter(self, ctx):
        self.pipe.active_state = "excavate"

    def _arm_frame(self, world_xyz):
        x, y, th = self.pipe.est_pose()
        mount = self.cfg.arm.mount
        qx, qy = worldmod.clamp_to_bounds(self.pipe.world, x, y, margin=1e-6)
        hx = worldmod.height_at(self.pipe.world, qx, qy)
        base_z = hx + mount[2]
        c, s = math.cos(th), math.sin(th)
        dx, dy = world_xyz[0] - x, world_xyz[1] - y
        bx = c * dx + s * dy - mount[0]
        by = -s * dx + c * dy - mount[1]
        return np.array([bx, by, world_xyz[2] - base_z])

    def _plan(self):
        world = self.pipe.world
        dep = self.deposit
        self.required = (self.mcfg.required_mass
                         if self.mcfg.required_mass is not None
                         else dep.total_mass)
        cap = self.mcfg.scoop_capacity
        if cap is None:
            cap = 0.5 * min(d.total_mass for d in world.deposits)
        self.scoop = ScoopState(capacity=cap)
        x, y, th = self.pipe.est_pose()
        to_dep = np.array([dep.position[0] - x, dep.position[1] - y])
        dist = float(np.linalg.norm(to_dep))
        u = to_dep / max(dist, 1e-9)
        perp = np.array([-u[1], u[0]])
        bin_xy = np.array(dep.position[:2]) + self.mcfg.bin_offset * perp
        bin_z = worldmod.height_at(world, bin_xy[0], bin_xy[1]) + 0.5
        dep_arm = self._arm_frame(dep.position)
        bin_arm = self._arm_frame((bin_xy[0], bin_xy[1], bin_z))
        self.trajs = plan_scoop_cycle(dep_arm, bin_arm, self.scoop,
                                      self.required, self.cfg.arm)
        self.arm_state = ArmJointState(q=self.trajs[0].waypoints[0].copy())

    def tick(self, ctx):
        if self.trajs is None:
            try:
                self._plan()
            except SimError as e:
                self.pipe.add_event("excavation_error", message=str(e))
                return "failed"
        if self.material_bin.mass >= self.required - 1e-9 \
                or self.traj_idx >= len(self.trajs):
            self.mctx.collected[self.deposit.id] = self.material_bin.mass
            return "done"
        traj = self.trajs[self.traj_idx]
        self.pipe.arm_q = self.arm_state.q
        self.pipe.step(DriveCommand.stop())
        events = step_arm(self.arm_state, traj, self.t_local,
                          self.mcfg.arm_gains, self.cfg.dt, self.cfg.arm,
                          scoop=self.scoop, dig_source=self.deposit,
                          material_bin=self.material_bin)
        for e in events:
            if e.kind in ("dig", "dump"):
                self.pipe.add_event(
                    e.kind, mass=round(e.mass, 9),
                    deposit=self.deposit.id,
                    deposit_remaining=round(self.deposit.remaining_mass, 9),
                    scoop=round(self.scoop.carried_mass, 9),
                    bin=round(self.material_bin.mass, 9))
        self.t_local += self.cfg.dt
        if self.t_local >= traj.duration + 0.5:
            self.traj_idx += 1
            self.t_local = 0.0
            if self.traj_idx < len(self.trajs):
                self.arm_state.fired_phases = set()
        return None


# ---------------------------------------------------------------------------
# Task 3: self localization


class SearchForObject(State):
    """Sparse sweep until the detector reports the CubeSat."""

    def __init__(self, pipe, cfg, mcfg, ctx):
        self.pipe, self.cfg, self.mcfg, self.mctx = pipe, cfg, mcfg, ctx
        self.follower = None
        self.replans = 0

    def on_enter(self, ctx):
        self.pipe.active_state = "search_object"

    def _detect(self):
        if self.pipe.tick % self.cfg.stereo_every:
            return
        dets = detect_objects(self.pipe.world, self.pipe.true_camera_pose(),
                              self.mcfg.detector, self.pipe.rng)
        for det in dets:
            if det.label != "cubesat":
                continue
            pose = self.pipe.est_camera_pose()
            self.mctx.detections.append((pose, det))
            self.pipe.add_event("detection", label=det.label,
                                bearing=round(det.bearing, 6),
                                range=round(det.range, 6))

    def tick(self, ctx):
        self._detect()
        if self.mctx.detections:
            return "found"
        if self.follower is None:
            region = (self.mcfg.coverage_region
                      or _default_region(self.pipe.world))
            plan = plan_coverage(region, self.mcfg.search_footprint,
                                 self.pipe.costmap(),
                                 start=self.pipe.est_pose()[:2], topup=False)
            if len(plan.path.poses) == 0:
                self.pipe.step(DriveCommand.stop())
                self.replans += 1
                return "not_found" if self.replans > 3 else None
            self.follower = PathFollower(self.pipe, plan.path, self.cfg,
                                         self.mcfg)
        out = self.follower.tick()
        if out == "arrived":
            return "not_found"
        if out in ("blocked", "stuck"):
            self.follower = None
            self.replans += 1
            if self.replans > 8:
                return "not_found"
        return None


class ObserveObject(State):
    """Approach the detection and gather spaced fixes, then solve."""

    def __init__(self, pipe, cfg, mcfg, ctx):
        self.pipe, self.cfg, self.mcfg, self.mctx = pipe, cfg, mcfg, ctx
        self.follower = None
        self.last_fix_xy = None

    def on_enter(self, ctx):
        self.pipe.active_state = "observe_object"
        self.last_fix_xy = self.pipe.est_pose()[:2]

    def _rough_object_xy(self):
        from .perception import _detection_ray_point
        pose, det = self.mctx.detections[-1]
        p = _detection_ray_point(pose, det)
        return (float(p[0]), float(p[1]))

    def _detect(self):
        if self.pipe.tick % self.cfg.stereo_every:
            return
        dets = detect_objects(self.pipe.world, self.pipe.true_camera_pose(),
                              self.mcfg.detector, self.pipe.rng)
        for det in dets:
            if det.label != "cubesat":
                continue
            x, y, _ = self.pipe.est_pose()
            if self.last_fix_xy is not None and \
                    math.hypot(x - self.last_fix_xy[0],
                               y - self.last_fix_xy[1]) \
                    < self.mcfg.detection_spacing:
                continue
            self.last_fix_xy = (x, y)
            self.mctx.detections.append((self.pipe.est_camera_pose(), det))
            self.pipe.add_event("detection", label=det.label,
                                bearing=round(det.bearing, 6),
                                range=round(det.range, 6))

    def tick(self, ctx):
        self._detect()
        if len(self.mctx.detections) >= self.mcfg.min_detections:
            try:
                pos, cov = estimate_object_position(self.mctx.detections)
            except SimError:
                self.mctx.detections = self.mctx.detections[:1]
                return None
            self.mctx.object_claim = [float(v) for v in pos]
            self.pipe.add_event("object_claim",
                                x=round(pos[0], 6), y=round(pos[1], 6),
                                z=round(pos[2], 6))
            return "estimated"
        # keep moving toward the rough position for pose diversity
        if self.follower is None:
            rough = self._rough_object_xy()
            x, y, _ = self.pipe.est_pose()
            d = math.hypot(rough[0] - x, rough[1] - y)
            if d > 4.0:
                u = ((rough[0] - x) / d, (rough[1] - y) / d)
                goal = (rough[0] - 4.0 * u[0], rough[1] - 4.0 * u[1])
            else:
                goal = (x + 1.5, y + 1.5)
            path = plan_to(self.pipe, self.cfg, goal)
            if path is None:
                self.pipe.step(DriveCommand.stop())
                return None
            self.follower = PathFollower(self.pipe, path, self.cfg, self.mcfg)
        out = self.follower.tick()
        if out == "arrived":
            # circle in place to shift the camera between fixes
            self.pipe.step(DriveCommand(mode=SKID, v=0.3, omega=0.4))
            self.follower = None
        elif out in ("blocked", "stuck"):
            self.follower = None
        return None


class GoHome(DriveTo):
    def __init__(self, pipe, cfg, mcfg, ctx):
        hb = pipe.world.home_base_pose
        super().__init__(pipe, cfg, mcfg, (hb[0], hb[1]), "go_home")
        self.mctx = ctx

    def tick(self, ctx):
        out = super().tick(ctx)
        if out == "arrived":
            self.mctx.returned_home = True
        return out


# ---------------------------------------------------------------------------


@dataclass
class MissionContext:
    claims: list = field(default_factory=list)
    collected: dict = field(default_factory=dict)
    detections: list = field(default_factory=list)
    object_claim: list | None = None
    returned_home: bool = False
    time: float = 0.0


def build_task_machine(task, pipe, cfg, mcfg, mctx):
    if task == TASK_RESOURCE_LOCALIZATION:
        sweep = CoverageSweep(pipe, cfg, mcfg, mctx)
        return sm_build({"sweep": sweep}, {("sweep", "done"): "success"},
                        "sweep")
    if task == TASK_RESOURCE_COLLECTION:
        world = pipe.world
        if not world.deposits:
            raise SimError("resource_collection requires at least one deposit")
        deposit = world.deposits[min(mcfg.deposit_index,
                                     len(world.deposits) - 1)]
        x, y, _ = pipe.est_pose()
        to_rover = np.array([x - deposit.position[0], y - deposit.position[1]])
        d = float(np.linalg.norm(to_rover))
        u = to_rover / max(d, 1e-9)
        park = (deposit.position[0] + mcfg.standoff * u[0],
                deposit.position[1] + mcfg.standoff * u[1])
        goto = DriveTo(pipe, cfg, mcfg, park, "goto_deposit")
        align = AlignTo(pipe, deposit.position[:2], "align_deposit")
        excavate = Excavate(pipe, cfg, mcfg, mctx, deposit)
        return sm_build(
            {"goto": goto, "align": align, "excavate": excavate},
            {("goto", "arrived"): "align",
             ("goto", "unreachable"): "failure",
             ("align", "aligned"): "excavate",
             ("excavate", "done"): "success",
             ("excavate", "failed"): "failure"},
            "goto")
    if task == TASK_SELF_LOCALIZATION:
        search = SearchForObject(pipe, cfg, mcfg, mctx)
        observe = ObserveObject(pipe, cfg, mcfg, mctx)
        home = GoHome(pipe, cfg, mcfg, mctx)
        return sm_build(
            {"search": search, "observe": observe, "home": home},
            {("search", "found"): "observe",
             ("search", "not_found"): "failure",
             ("observe", "estimated"): "home",
             ("home", "arrived"): "success",
             ("home", "unreachable"): "failure"},
            "search")
    raise SimError(f"unknown task '{task}'")


def run_task(task, world, cfg, mcfg, rng, start_pose=None):
    """Execute one qualification task end to end.

    Returns (MissionReport, ExecutionTrace, telemetry rows). Budget
    exhaustion produces a timeout outcome with whatever partial results the
    executor collected.
    """
    from .pipeline import RoverPipeline
    if start_pose is None:
        hb = world.home_base_pose
        start_pose = (hb[0], hb[1], hb[2])
    pipe = RoverPipeline(world, cfg, rng, start_pose=start_pose)
    mctx = MissionContext()
    machine = build_task_machine(task, pipe, cfg, mcfg, mctx)

    class Ctx:
        pass

    ctx = Ctx()
    ctx.pipe = pipe
    ctx.time = 0.0

    budget_ticks = int(mcfg.budget_s / cfg.dt) + 50

    def advance(c):
        c.time = pipe.time

    trace = sm_execute(machine, ctx, tick_budget=budget_ticks, advance=advance)
    report = MissionReport(
        task=task,
        claims=list(mctx.claims),
        collected=dict(mctx.collected),
        object_claim=mctx.object_claim,
        returned_home=mctx.returned_home,
        elapsed=pipe.time,
        outcome=trace.final_outcome,
        final_true_pose=list(pipe.true_pose()),
    )
    return report, trace, pipe.telemetry


def score(report, world, match_tolerance=2.0, home_tolerance=3.0,
          required_mass=None):
    """Score a report against world ground truth.

    Claims match the nearest unmatched true deposit within tolerance
    (greedy over ascending distance). Vacuous recall (no true deposits)
    scores 1.0.
    """
    s = Score(task=report.task)
    if report.task == TASK_RESOURCE_LOCALIZATION:
        true_deps = list(world.deposits)
        pairs = []
        for ci, (cx, cy, ct) in enumerate(report.claims):
            for di, dep in enumerate(true_deps):
                d = math.hypot(cx - dep.position[0], cy - dep.position[1])
                if d <= match_tolerance:
                    pairs.append((d, ci, di))
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))
        used_c, used_d = set(), set()
        matches = []
        for d, ci, di in pairs:
            if ci in used_c or di in used_d:
                continue
            used_c.add(ci)
            used_d.add(di)
            matches.append((d, ci, di))
        if true_deps:
            s.recall = len(matches) / len(true_deps)
        else:
            s.recall = 1.0  # vacuous
        if matches:
            s.mean_error = float(np.mean([d for d, _, _ in matches]))
            correct = sum(1 for _, ci, di in matches
                          if report.claims[ci][2] == true_deps[di].type_label)
            s.type_accuracy = correct / len(matches)
        else:
            s.mean_error = None
            s.type_accuracy = 1.0 if not true_deps else 0.0
        err_term = (1.0 - min(s.mean_error / match_tolerance, 1.0)
                    if s.mean_error is not None else 0.0)
        s.composite = 0.6 * s.recall + 0.2 * s.type_accuracy + 0.2 * err_term
    elif report.task == TASK_RESOURCE_COLLECTION:
        total = sum(report.collected.values())
        if required_mass is None:
            required_mass = sum(d.total_mass for d in world.deposits[:1]) or 1.0
        s.collected_fraction = min(total / required_mass, 1.0)
        s.composite = s.collected_fraction
    elif report.task == TASK_SELF_LOCALIZATION:
        if report.object_claim is not None:
            s.object_error = float(np.linalg.norm(
                np.asarray(report.object_claim)
                - np.asarray(world.cubesat_position)))
        hb = world.home_base_pose
        d_home = math.hypot(report.final_true_pose[0] - hb[0],
                            report.final_true_pose[1] - hb[1])
        s.home_success = bool(report.returned_home and
                              d_home <= home_tolerance)
        obj_term = (max(0.0, 1.0 - s.object_error / 2.0)
                    if s.object_error is not None else 0.0)
        s.composite = 0.5 * obj_term + 0.5 * (1.0 if s.home_success else 0.0)
    else:
        raise SimError(f"unknown task '{report.task}'")
    return s
