"""4R excavator arm: DH kinematics, closed-form IK, Jacobian, scoop cycles.

Joint layout: shoulder azimuth (q1, unbounded), shoulder elevation (q2),
elbow pivot (q3), wrist pitch (q4). Joints 2-4 share parallel axes after
the first link's twist, so the bucket's global pitch in the vertical plane
selected by q1 is simply q2 + q3 + q4. The wrist digs and holds in the low
part of its range and dumps in the high part.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LimitInfeasibleError, PlanningFailure, UnreachableError
from .geometry import wrap_angle


@dataclass
class DHRow:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


def _default_limits():
    return (
        (-math.inf, math.inf),   # shoulder azimuth: no angle limits
        (-math.pi / 4, 2 * math.pi / 3),  # shoulder elevation: non-symmetric
        (-2.4, 2.4),             # elbow pivot: symmetric
        (0.0, 2.8),              # wrist pitch: zero to large angles
    )


@dataclass
class ArmParams:
    links: tuple = (0.3, 2.5, 1.5, 0.0)
    joint_limits: tuple = field(default_factory=_default_limits)
    mount: tuple = (0.0, 0.0, 0.0)   # arm base position on the rover body
    dig_range: tuple = (0.0, 1.2)    # q4 digs and holds here
    drop_range: tuple = (2.2, 2.8)   # q4 drops into the bin here
    carry_band: float = 0.25         # allowed global-pitch deviation while carrying
    carry_pitch: float = 0.0         # hold reference: level bucket
    max_joint_rate: float = 0.8      # rad/s
    terrain_clearance: float = 0.2

    @property
    def dh_rows(self):
        l1, l2, l3, l4 = self.links
        return (DHRow(0.0, math.pi / 2, l1),
                DHRow(l2, 0.0, 0.0),
                DHRow(l3, 0.0, 0.0),
                DHRow(l4, 0.0, 0.0))

    def within_limits(self, q, tol=1e-9):
        return all(lo - tol <= qi <= hi + tol
                   for qi, (lo, hi) in zip(q, self.joint_limits))

    def clamp(self, q):
        return np.array([min(max(qi, lo), hi)
                         for qi, (lo, hi) in zip(q, self.joint_limits)])


@dataclass
class ScoopState:
    capacity: float
    carried_mass: float = 0.0

    @property
    def mode(self):
        return "carrying" if self.carried_mass > 0 else "empty"


@dataclass
class ArmTrajectory:
    times: np.ndarray        # strictly increasing, seconds
    waypoints: np.ndarray    # (n, 4) joint vectors
    phases: list             # phase label per waypoint

    @property
    def duration(self):
        return float(self.times[-1])

    def sample(self, t):
        """Linear joint-space interpolation, clamped to the end points."""
        if t <= self.times[0]:
            return self.waypoints[0].copy()
        if t >= self.times[-1]:
            return self.waypoints[-1].copy()
        idx = int(np.searchsorted(self.times, t) - 1)
        t0, t1 = self.times[idx], self.times[idx + 1]
        frac = (t - t0) / (t1 - t0)
        return (1 - frac) * self.waypoints[idx] + frac * self.waypoints[idx + 1]

    def phase_end_time(self, phase):
        """Time of the last waypoint carrying the given phase label, or None."""
        hits = [self.times[i] for i, p in enumerate(self.phases) if p == phase]
        return float(hits[-1]) if hits else None

    def to_rows(self):
        """Delimited-text export rows: t, q1..q4, phase."""
        return [f"{t:.6f},{q[0]:.9f},{q[1]:.9f},{q[2]:.9f},{q[3]:.9f},{p}"
                for t, q, p in zip(self.times, self.waypoints, self.phases)]


_DEFAULT_PARAMS = ArmParams()


def dh_transform(row, q):
    """Standard DH link transform RotZ(theta) TransZ(d) TransX(a) RotX(alpha)."""
    th = q + row.theta_offset
    ct, st = math.cos(th), math.sin(th)
    ca, sa = math.cos(row.alpha), math.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def fk(q, params):
    """Bucket pose and intermediate frames for a joint vector.

    Returns (position (3,), rotation (3,3), frames) where frames[i] is the
    4x4 transform of link frame i (frames[0] is the base identity).
    """
    frames = [np.eye(4)]
    t = np.eye(4)
    for row, qi in zip(params.dh_rows, q):
        t = t @ dh_transform(row, qi)
        frames.append(t.copy())
    return t[:3, 3].copy(), t[:3, :3].copy(), frames


def bucket_pitch(q, params=None):
    """Global bucket pitch: elevation of the bucket x-axis above horizontal.

    Measured in the vertical half-plane containing the bucket position, so
    it equals q2 + q3 + q4 (wrapped) for front-reaching configurations and
    mirrors through the vertical for back-reaching ones.
    """
    params = params or _DEFAULT_PARAMS
    sigma = q[1] + q[2] + q[3]
    l1, l2, l3, l4 = params.links
    rho = (l2 * math.cos(q[1]) + l3 * math.cos(q[1] + q[2])
           + l4 * math.cos(sigma))
    if rho >= 0:
        return wrap_angle(sigma)
    return wrap_angle(math.pi - sigma)


def ik(target_position, pitch, params):
    """Closed-form IK for bucket position plus global pitch.

    Azimuth decouples as q1 = atan2(y, x); the remaining chain is a planar
    2R problem in the vertical plane at radius r (wrist point backed off
    along the pitch direction when the bucket link has length). Both
    azimuth half-planes are considered, since the unbounded shoulder can
    also reach the target over the top, giving up to two elbow branches per
    half-plane. Only limit-respecting solutions are returned.
    """
    x, y, z = target_position
    l1, l2, l3, l4 = params.links
    q1_front = math.atan2(y, x)
    r = math.hypot(x, y)
    zz = z - l1
    solutions = []
    any_reachable = False
    # (azimuth, signed planar radius, in-plane pitch) per half-plane
    for q1, rb, sigma in ((q1_front, r, pitch),
                          (q1_front + math.pi, -r, math.pi - pitch)):
        rw = rb - l4 * math.cos(sigma)
        zw = zz - l4 * math.sin(sigma)
        reach = math.hypot(rw, zw)
        if reach > l2 + l3 + 1e-12 or reach < abs(l2 - l3) - 1e-12:
            continue
        any_reachable = True
        cos_q3 = (rw * rw + zw * zw - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)
        cos_q3 = min(1.0, max(-1.0, cos_q3))
        q3_mag = math.acos(cos_q3)
        for q3 in ((q3_mag, -q3_mag) if q3_mag > 1e-12 else (0.0,)):
            q2 = (math.atan2(zw, rw)
                  - math.atan2(l3 * math.sin(q3), l2 + l3 * math.cos(q3)))
            # wrist angle recovered modulo a full turn into its limit window
            q4 = math.fmod(sigma - q2 - q3, 2.0 * math.pi)
            lo4, hi4 = params.joint_limits[3]
            for q4c in (q4, q4 + 2.0 * math.pi, q4 - 2.0 * math.pi):
                if lo4 - 1e-9 <= q4c <= hi4 + 1e-9:
                    q4 = q4c
                    break
            q = np.array([wrap_angle(q1), q2, q3, q4])
            if params.within_limits(q):
                solutions.append(q)
    if not any_reachable:
        reach = math.hypot(r - l4 * math.cos(pitch), zz - l4 * math.sin(pitch))
        raise UnreachableError(
            f"target at planar reach {reach:.4f} outside [{abs(l2 - l3):.4f}, "
            f"{l2 + l3:.4f}]")
    if not solutions:
        raise LimitInfeasibleError(
            "all elbow branches violate joint limits for this target")
    return solutions


def jacobian(q, params):
    """Geometric Jacobian (6x4): stacked linear and angular columns."""
    _, _, frames = fk(q, params)
    p_e = frames[-1][:3, 3]
    cols = []
    for i in range(4):
        z_axis = frames[i][:3, 2]
        p_i = frames[i][:3, 3]
        cols.append(np.concatenate([np.cross(z_axis, p_e - p_i), z_axis]))
    return np.column_stack(cols)


def resolved_rate_step(q, target_position, target_pitch, params, gain, dt,
                       damping=1e-3):
    """One damped resolved-rate step toward a (position, pitch) target.

    Task space is 4-dimensional: bucket position plus global pitch. The
    damped pseudo-inverse keeps the step bounded at singularities; the
    result is clamped to the joint limits.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    pos, _, _ = fk(q, params)
    err = np.empty(4)
    err[:3] = np.asarray(target_position) - pos
    err[3] = wrap_angle(target_pitch - bucket_pitch(q, params))
    l1, l2, l3, l4 = params.links
    sigma = q[1] + q[2] + q[3]
    rho = l2 * math.cos(q[1]) + l3 * math.cos(q[1] + q[2]) + l4 * math.cos(sigma)
    s = 1.0 if rho >= 0 else -1.0
    j_task = np.vstack([jacobian(q, params)[:3], [0.0, s, s, s]])
    jjt = j_task @ j_task.T + damping * np.eye(4)
    qdot = j_task.T @ np.linalg.solve(jjt, gain * err)
    return params.clamp(np.asarray(q) + dt * qdot)


def _pick_branch(solutions, reference):
    """Prefer the branch closest to a reference configuration."""
    return min(solutions, key=lambda s: float(np.sum((s - reference) ** 2)))


def _segment_time(q_from, q_to, rate):
    return max(float(np.max(np.abs(np.asarray(q_to) - np.asarray(q_from)))) / rate,
               1e-3)


class _TrajectoryBuilder:
    def __init__(self, q0, rate):
        self.times = [0.0]
        self.waypoints = [np.asarray(q0, dtype=float)]
        self.phases = ["approach"]
        self.rate = rate

    def add(self, q, phase):
        q = np.asarray(q, dtype=float)
        self.times.append(self.times[-1] + _segment_time(self.waypoints[-1], q,
                                                         self.rate))
        self.waypoints.append(q)
        self.phases.append(phase)

    def build(self):
        return ArmTrajectory(times=np.array(self.times),
                             waypoints=np.array(self.waypoints),
                             phases=self.phases)


def plan_scoop_cycle(deposit_pos, bin_pos, scoop, deposit_mass, params,
                     home_q=None, carry_steps=6, lift=0.5):
    """Plan ceil(mass/capacity) dig-carry-dump cycles.

    Every carry waypoint holds the bucket's global pitch at the carry
    reference (inside the carry band by construction) and keeps q4 within
    its limits; dig and dump sweep the wrist through the dig and drop
    sub-ranges at fixed bucket position.
    """
    if deposit_mass <= 0:
        raise ValueError("deposit_mass must be > 0")
    if scoop.capacity <= 0:
        raise ValueError("scoop capacity must be > 0")
    deposit_pos = np.asarray(deposit_pos, dtype=float)
    bin_pos = np.asarray(bin_pos, dtype=float)
    n_cycles = int(math.ceil(deposit_mass / scoop.capacity))

    dig_lo, dig_hi = params.dig_range
    drop_lo, drop_hi = params.drop_range
    drop_q4 = 0.5 * (drop_lo + drop_hi)
    pitch_c = params.carry_pitch

    def solve(position, pitch, reference):
        sols = ik(position, pitch, params)
        return _pick_branch(sols, reference)

    # base configurations; UnreachableError propagates to the caller
    ref = np.zeros(4) if home_q is None else np.asarray(home_q, dtype=float)
    dig_base = solve(deposit_pos, bucket_pitch_for(deposit_pos, dig_lo, params),
                     ref)
    if home_q is None:
        lifted = deposit_pos + np.array([0.0, 0.0, lift])
        home_q = solve(lifted, pitch_c, dig_base)
    home_q = np.asarray(home_q, dtype=float)

    trajectories = []
    for _ in range(n_cycles):
        b = _TrajectoryBuilder(home_q, params.max_joint_rate)
        # approach: hover over the deposit, wrist at dig start
        hover = deposit_pos + np.array([0.0, 0.0, lift])
        q_hover = solve(hover, bucket_pitch_for(hover, dig_lo, params), home_q)
        b.add(q_hover, "approach")
        q_dig0 = solve(deposit_pos, bucket_pitch_for(deposit_pos, dig_lo, params),
                       q_hover)
        b.add(q_dig0, "approach")
        # dig: sweep the wrist through the dig/hold range at fixed position
        for frac in (0.5, 1.0):
            q = q_dig0.copy()
            q[3] = dig_lo + frac * (dig_hi - dig_lo)
            b.add(q, "dig")
        # carry: level the bucket, lift, and swing to above the bin.
        # Interpolating in cylindrical coordinates keeps the swing at a
        # safe radius instead of cutting through the inner workspace.
        start = deposit_pos + np.array([0.0, 0.0, lift])
        end = bin_pos + np.array([0.0, 0.0, lift])
        az0, az1 = math.atan2(start[1], start[0]), math.atan2(end[1], end[0])
        daz = wrap_angle(az1 - az0)
        r0, r1 = math.hypot(start[0], start[1]), math.hypot(end[0], end[1])
        prev = b.waypoints[-1]
        carry_pts = []
        for k in range(carry_steps + 1):
            frac = k / carry_steps
            az = az0 + frac * daz
            radius = (1 - frac) * r0 + frac * r1
            z = (1 - frac) * start[2] + frac * end[2]
            # a shallow arc keeps the bucket clear of the terrain mid-swing
            z += math.sin(math.pi * frac) * 0.3
            pos = np.array([radius * math.cos(az), radius * math.sin(az), z])
            q = solve(pos, pitch_c, prev)
            carry_pts.append(q)
            prev = q
        for q in carry_pts:
            if abs(bucket_pitch(q, params) - pitch_c) > params.carry_band:
                raise PlanningFailure("carry waypoint violates the bucket-angle band")
            b.add(q, "carry")
        # dump: drop the wrist into the drop range over the bin
        q_bin = solve(bin_pos + np.array([0.0, 0.0, 0.2]), pitch_c, prev)
        b.add(q_bin, "carry")
        q_drop = q_bin.copy()
        q_drop[3] = drop_q4
        b.add(q_drop, "dump")
        # retract to the home configuration
        b.add(home_q, "retract")
        trajectories.append(b.build())
    return trajectories


def bucket_pitch_for(position, q4, params):
    """Global pitch obtained at a position when the wrist is held at q4.

    With a zero-length bucket link the wrist point equals the bucket point,
    so (q2, q3) are fixed by position alone and any wrist angle is free.
    """
    x, y, z = position
    l1, l2, l3, l4 = params.links
    if l4 > 1e-12:
        # wrist no longer decouples; fall back to a level bucket
        return params.carry_pitch
    r = math.hypot(x, y)
    zz = z - l1
    cos_q3 = (r * r + zz * zz - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)
    if abs(cos_q3) > 1.0 + 1e-12:
        raise UnreachableError("position outside the planar workspace")
    cos_q3 = min(1.0, max(-1.0, cos_q3))
    q3 = -math.acos(cos_q3)  # elbow-down keeps the shoulder in its range
    q2 = math.atan2(zz, r) - math.atan2(l3 * math.sin(q3), l2 + l3 * math.cos(q3))
    return q2 + q3 + q4


@dataclass
class ArmJointState:
    q: np.ndarray
    qdot: np.ndarray = None
    pid_integrals: np.ndarray = None
    fired_phases: set = field(default_factory=set)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.qdot is None:
            self.qdot = np.zeros(4)
        if self.pid_integrals is None:
            self.pid_integrals = np.zeros(4)


@dataclass
class ArmEvent:
    kind: str     # dig | dump | tracking_fault
    mass: float = 0.0


@dataclass
class MaterialBin:
    """Static hauler bin accumulating dumped volatile mass."""
    mass: float = 0.0


def step_arm(state, trajectory, t, gains, dt, params, scoop=None,
             dig_source=None, material_bin=None, fault_threshold=0.5):
    """Track the trajectory with per-joint PID rate control for one step.

    Emits a dig event when the dig phase completes (the scoop takes
    min(capacity - carried, remaining) from dig_source) and a dump event
    when the dump phase completes (carried mass moves to material_bin).
    Both transfers are applied here so deposit + scoop + bin mass is
    conserved at every event.
    """
    kp, ki, kd = gains
    q_sp = trajectory.sample(t + dt)
    err = q_sp - state.q
    state.pid_integrals = np.clip(state.pid_integrals + err * dt, -2.0, 2.0)
    rate = kp * err + ki * state.pid_integrals
    rate = np.clip(rate, -params.max_joint_rate * 2.0, params.max_joint_rate * 2.0)
    state.q = params.clamp(state.q + rate * dt)
    state.qdot = rate

    events = []
    if float(np.max(np.abs(err))) > fault_threshold:
        events.append(ArmEvent(kind="tracking_fault"))
    t_next = t + dt
    for phase, kind in (("dig", "dig"), ("dump", "dump")):
        end = trajectory.phase_end_time(phase)
        if end is None or phase in state.fired_phases or t_next < end:
            continue
        state.fired_phases.add(phase)
        if kind == "dig":
            take = 0.0
            if scoop is not None and dig_source is not None:
                take = min(scoop.capacity - scoop.carried_mass,
                           dig_source.remaining_mass)
                dig_source.remaining_mass -= take
                scoop.carried_mass += take
            events.append(ArmEvent(kind="dig", mass=take))
        else:
            dropped = 0.0
            if scoop is not None:
                dropped = scoop.carried_mass
                scoop.carried_mass = 0.0
                if material_bin is not None:
                    material_bin.mass += dropped
            events.append(ArmEvent(kind="dump", mass=dropped))
    return events
