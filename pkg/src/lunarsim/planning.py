"""Global, local, recovery, and coverage planners over a costmap.

plan_astar covers both A* (euclidean heuristic) and Dijkstra (zero
heuristic); plan_rrt_star searches continuous space with rewiring; dwa_step
samples the dynamic window, rolls trajectories forward, and scores them;
recovery is a full in-place rotation; plan_coverage lays boustrophedon rows
with A* detours around obstacles.
"""

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidEndpointError
from .geometry import integrate_arc, wrap_angle
from .mapping import COST_INSCRIBED, COST_LETHAL, COST_SCALED_MAX, COST_UNKNOWN

MAX_SPEED = 1.5


@dataclass
class Path:
    poses: list          # (x, y, theta)
    cost: float

    def __len__(self):
        return len(self.poses)

    def to_rows(self):
        return [f"{x:.6f},{y:.6f},{th:.6f}" for x, y, th in self.poses]

    def arc_lengths(self):
        out = [0.0]
        for (x0, y0, _), (x1, y1, _) in zip(self.poses[:-1], self.poses[1:]):
            out.append(out[-1] + math.hypot(x1 - x0, y1 - y0))
        return out


@dataclass
class VelocityCommand:
    v: float = 0.0
    omega: float = 0.0
    vy: float = 0.0


def _cell_scale(costmap, i, j, unknown_cost):
    c = costmap.cost[j, i]
    if c == COST_UNKNOWN:
        return unknown_cost / COST_SCALED_MAX
    return float(c) / COST_SCALED_MAX


def _traversable(costmap, i, j):
    return costmap.cost[j, i] < COST_INSCRIBED or costmap.cost[j, i] == COST_UNKNOWN


_NEIGHBORS = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
              (1, 1, math.sqrt(2.0)), (1, -1, math.sqrt(2.0)),
              (-1, 1, math.sqrt(2.0)), (-1, -1, math.sqrt(2.0))]


def plan_astar(costmap, start, goal, heuristic="euclidean", unknown_cost=20.0):
    """Optimal 8-connected grid search from start to goal (world coords).

    Step cost is move length times (1 + destination cell cost scale); the
    euclidean heuristic is admissible because every scale is >= 0. Ties
    break toward the lower cell index. Returns None when the goal is
    disconnected (distinct from the invalid-endpoint error).
    """
    ny, nx = costmap.shape
    si, sj = costmap.cell_of(start[0], start[1])
    gi, gj = costmap.cell_of(goal[0], goal[1])
    for (i, j, name) in ((si, sj, "start"), (gi, gj, "goal")):
        if not costmap.in_bounds(i, j):
            raise InvalidEndpointError(f"{name} cell ({i},{j}) outside the map")
        if costmap.cost[j, i] == COST_LETHAL:
            raise InvalidEndpointError(f"{name} lies in a lethal cell")
    res = costmap.resolution
    h_scale = res if heuristic == "euclidean" else 0.0

    def h(i, j):
        return h_scale * math.hypot(i - gi, j - gj)

    g_cost = {(si, sj): 0.0}
    parent = {}
    open_heap = [(h(si, sj), sj * nx + si, si, sj)]
    closed = set()
    while open_heap:
        f, _, i, j = heapq.heappop(open_heap)
        if (i, j) in closed:
            continue
        closed.add((i, j))
        if (i, j) == (gi, gj):
            cells = [(i, j)]
            while cells[-1] in parent:
                cells.append(parent[cells[-1]])
            cells.reverse()
            poses = _cells_to_poses(costmap, cells, goal)
            return Path(poses=poses, cost=g_cost[(gi, gj)])
        base = g_cost[(i, j)]
        for di, dj, step in _NEIGHBORS:
            ni, nj = i + di, j + dj
            if not (0 <= ni < nx and 0 <= nj < ny):
                continue
            if not _traversable(costmap, ni, nj) or (ni, nj) in closed:
                continue
            new_g = base + step * res * (1.0 + _cell_scale(costmap, ni, nj,
                                                           unknown_cost))
            if new_g < g_cost.get((ni, nj), math.inf) - 1e-15:
                g_cost[(ni, nj)] = new_g
                parent[(ni, nj)] = (i, j)
                heapq.heappush(open_heap,
                               (new_g + h(ni, nj), nj * nx + ni, ni, nj))
    return None


def _cells_to_poses(costmap, cells, goal):
    pts = [costmap.center_of(i, j) for i, j in cells]
    poses = []
    for k, (x, y) in enumerate(pts):
        if k + 1 < len(pts):
            th = math.atan2(pts[k + 1][1] - y, pts[k + 1][0] - x)
        elif len(goal) > 2:
            th = goal[2]
        elif poses:
            th = poses[-1][2]
        else:
            th = 0.0
        poses.append((x, y, th))
    return poses


@dataclass
class RrtConfig:
    max_samples: int = 5000
    steer: float = 1.0
    goal_bias: float = 0.05
    goal_tolerance: float = 0.5
    gamma: float | None = None    # default derived from the map area
    collision_step: float | None = None


@dataclass
class RrtResult:
    path: Path | None
    cost: float
    nodes: np.ndarray     # (n, 2) sampled tree vertices
    parents: np.ndarray   # (n,) parent index (-1 for root)


def _segment_free(costmap, a, b, step):
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    n = max(int(math.ceil(d / step)), 1)
    for k in range(n + 1):
        t = k / n
        x = a[0] + t * (b[0] - a[0])
        y = a[1] + t * (b[1] - a[1])
        i, j = costmap.cell_of(x, y)
        if not costmap.in_bounds(i, j) or costmap.is_blocked(i, j):
            return False
    return True


def plan_rrt_star(costmap, start, goal, cfg=None, rng=None):
    """RRT* in continuous (x, y) with rewiring radius gamma sqrt(log n / n).

    Deterministic for a fixed rng seed; returns the best goal-reaching path
    after max_samples samples (path None when the goal was never connected).
    """
    cfg = cfg or RrtConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    ny, nx = costmap.shape
    x0, y0 = costmap.origin
    x1 = x0 + nx * costmap.resolution
    y1 = y0 + ny * costmap.resolution
    step = cfg.collision_step or costmap.resolution * 0.5
    area = (x1 - x0) * (y1 - y0)
    gamma = cfg.gamma if cfg.gamma is not None else 2.5 * math.sqrt(area / math.pi)

    for name, p in (("start", start), ("goal", goal)):
        i, j = costmap.cell_of(p[0], p[1])
        if not costmap.in_bounds(i, j) or costmap.is_blocked(i, j):
            raise InvalidEndpointError(f"{name} is blocked or outside the map")

    nodes = [(float(start[0]), float(start[1]))]
    parents = [-1]
    costs = [0.0]
    children = {0: []}
    xs = np.empty(cfg.max_samples + 1)
    ys = np.empty(cfg.max_samples + 1)
    xs[0], ys[0] = nodes[0]
    n = 1

    def propagate(k, delta):
        stack = [k]
        while stack:
            c = stack.pop()
            costs[c] += delta
            stack.extend(children[c])

    for _ in range(cfg.max_samples):
        if rng.uniform() < cfg.goal_bias:
            sample = (float(goal[0]), float(goal[1]))
        else:
            sample = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        d2 = (xs[:n] - sample[0]) ** 2 + (ys[:n] - sample[1]) ** 2
        nearest = int(np.argmin(d2))
        dist = math.sqrt(d2[nearest])
        if dist < 1e-9:
            continue
        frac = min(cfg.steer / dist, 1.0)
        new = (nodes[nearest][0] + frac * (sample[0] - nodes[nearest][0]),
               nodes[nearest][1] + frac * (sample[1] - nodes[nearest][1]))
        if not _segment_free(costmap, nodes[nearest], new, step):
            continue
        radius = gamma * math.sqrt(math.log(n + 1) / (n + 1))
        nd2 = (xs[:n] - new[0]) ** 2 + (ys[:n] - new[1]) ** 2
        near = np.flatnonzero(nd2 <= radius * radius)
        # choose the cheapest collision-free parent
        best_parent = nearest
        best_cost = costs[nearest] + dist * frac
        for k in near:
            k = int(k)
            c = costs[k] + math.sqrt(nd2[k])
            if c < best_cost - 1e-12 and _segment_free(costmap, nodes[k], new,
                                                       step):
                best_parent, best_cost = k, c
        idx = n
        nodes.append(new)
        parents.append(best_parent)
        costs.append(best_cost)
        children[idx] = []
        children[best_parent].append(idx)
        xs[idx], ys[idx] = new
        n += 1
        # rewire the neighborhood through the new node
        for k in near:
            k = int(k)
            if k == best_parent:
                continue
            c = best_cost + math.sqrt(nd2[k])
            if c < costs[k] - 1e-12 and _segment_free(costmap, new, nodes[k],
                                                      step):
                children[parents[k]].remove(k)
                parents[k] = idx
                children[idx].append(k)
                propagate(k, c - costs[k])

    gx, gy = float(goal[0]), float(goal[1])
    gd = np.hypot(xs[:n] - gx, ys[:n] - gy)
    cand = np.flatnonzero(gd <= cfg.goal_tolerance)
    best_idx = -1
    best_total = math.inf
    for k in cand:
        k = int(k)
        total = costs[k] + gd[k]
        if total < best_total - 1e-12 and _segment_free(costmap, nodes[k],
                                                        (gx, gy), step):
            best_idx, best_total = k, total
    node_arr = np.column_stack([xs[:n], ys[:n]])
    parent_arr = np.array(parents)
    if best_idx < 0:
        return RrtResult(path=None, cost=math.inf, nodes=node_arr,
                         parents=parent_arr)
    chain = [best_idx]
    while parents[chain[-1]] >= 0:
        chain.append(parents[chain[-1]])
    chain.reverse()
    pts = [nodes[k] for k in chain] + [(gx, gy)]
    poses = []
    for k, (x, y) in enumerate(pts):
        if k + 1 < len(pts):
            th = math.atan2(pts[k + 1][1] - y, pts[k + 1][0] - x)
        else:
            th = poses[-1][2] if poses else 0.0
        poses.append((x, y, th))
    return RrtResult(path=Path(poses=poses, cost=best_total), cost=best_total,
                     nodes=node_arr, parents=parent_arr)


@dataclass
class DwaConfig:
    v_min: float = -0.3
    v_max: float = 1.5
    omega_max: float = 1.2
    accel_v: float = 2.0
    accel_omega: float = 3.0
    n_v: int = 11
    n_omega: int = 11
    horizon: float = 2.0
    sim_dt: float = 0.1
    command_dt: float = 0.5
    w_heading: float = 0.6
    w_clearance: float = 0.3
    w_velocity: float = 0.1
    carrot_distance: float = 2.0

    def validate(self):
        assert self.n_v >= 1 and self.n_omega >= 1
        assert self.horizon > 0
        assert min(self.w_heading, self.w_clearance, self.w_velocity) >= 0


def carrot_point(path, pose, lookahead):
    """Point on the path ahead of the nearest path point by arc length."""
    pts = path.poses
    d = [math.hypot(p[0] - pose[0], p[1] - pose[1]) for p in pts]
    nearest = int(np.argmin(d))
    lengths = path.arc_lengths()
    target_s = lengths[nearest] + lookahead
    for k in range(nearest, len(pts)):
        if lengths[k] >= target_s:
            return pts[k]
    return pts[-1]


def rollout(pose, v, omega, horizon, sim_dt):
    poses = [tuple(pose)]
    steps = int(round(horizon / sim_dt))
    for _ in range(steps):
        poses.append(integrate_arc(poses[-1], v, 0.0, omega, sim_dt))
    return poses


def _trajectory_cost_profile(costmap, poses):
    """(collides, max cell cost scale) along a trajectory."""
    worst = 0.0
    for x, y, _ in poses:
        i, j = costmap.cell_of(x, y)
        if not costmap.in_bounds(i, j):
            return True, 1.0
        c = costmap.cost[j, i]
        if c == COST_LETHAL or c == COST_INSCRIBED:
            return True, 1.0
        if c != COST_UNKNOWN:
            worst = max(worst, float(c) / COST_SCALED_MAX)
    return False, worst


def dwa_step(costmap, pose, twist, global_path, cfg=None):
    """Sample the dynamic window, simulate, score, and pick the best command.

    Scores combine heading alignment to a carrot point on the global path,
    clearance (low cell cost along the trajectory), and forward velocity.
    Returns (VelocityCommand, trajectory poses) or None when every sample
    collides (recovery trigger). Rollouts are evaluated in one closed-form
    batch over the sample grid.
    """
    cfg = cfg or DwaConfig()
    cfg.validate()
    v0, _, om0 = twist
    v_lo = max(cfg.v_min, v0 - cfg.accel_v * cfg.command_dt)
    v_hi = min(cfg.v_max, v0 + cfg.accel_v * cfg.command_dt)
    om_lo = max(-cfg.omega_max, om0 - cfg.accel_omega * cfg.command_dt)
    om_hi = min(cfg.omega_max, om0 + cfg.accel_omega * cfg.command_dt)
    vs = np.linspace(v_lo, v_hi, cfg.n_v)
    oms = np.linspace(om_lo, om_hi, cfg.n_omega)
    carrot = carrot_point(global_path, pose, cfg.carrot_distance)

    v_grid = np.repeat(vs, cfg.n_omega)          # sample index = iv*n_om + iom
    om_grid = np.tile(oms, cfg.n_v)
    steps = int(round(cfg.horizon / cfg.sim_dt))
    t = cfg.sim_dt * np.arange(steps + 1)
    x0, y0, th0 = pose
    th_t = th0 + om_grid[:, None] * t[None, :]
    turning = np.abs(om_grid) > 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(turning, v_grid / np.where(turning, om_grid, 1.0), 0.0)
    x_arc = x0 + r[:, None] * (np.sin(th_t) - math.sin(th0))
    y_arc = y0 - r[:, None] * (np.cos(th_t) - math.cos(th0))
    x_str = x0 + v_grid[:, None] * math.cos(th0) * t[None, :]
    y_str = y0 + v_grid[:, None] * math.sin(th0) * t[None, :]
    xs = np.where(turning[:, None], x_arc, x_str)
    ys = np.where(turning[:, None], y_arc, y_str)

    res = costmap.resolution
    ii = np.floor((xs - costmap.origin[0]) / res).astype(int)
    jj = np.floor((ys - costmap.origin[1]) / res).astype(int)
    ny, nx = costmap.shape
    inb = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
    cost = np.full(ii.shape, float(COST_LETHAL))
    cost[inb] = costmap.cost[jj[inb], ii[inb]].astype(float)
    blocked = (cost == COST_LETHAL) | (cost == COST_INSCRIBED) | ~inb
    collides = blocked.any(axis=1)
    known = cost != COST_UNKNOWN
    scaled = np.where(known, cost, 0.0) / COST_SCALED_MAX
    worst = scaled.max(axis=1)

    ex, ey, eth = xs[:, -1], ys[:, -1], th_t[:, -1]
    err = np.abs(wrap_angle(np.arctan2(carrot[1] - ey, carrot[0] - ex) - eth))
    heading = 1.0 - err / math.pi
    clearance = 1.0 - worst
    velocity = np.maximum(v_grid, 0.0) / cfg.v_max
    score = (cfg.w_heading * heading + cfg.w_clearance * clearance
             + cfg.w_velocity * velocity)
    score[collides] = -np.inf
    if not np.isfinite(score).any():
        return None
    # deterministic argmax: best score, then smaller |omega|, then lower index
    best_score = score.max()
    cand = np.flatnonzero(score == best_score)
    cand = cand[np.lexsort((cand, np.abs(om_grid[cand])))]
    k = int(cand[0])
    traj = [(float(xs[k, s]), float(ys[k, s]), float(wrap_angle(th_t[k, s])))
            for s in range(steps + 1)]
    return VelocityCommand(v=float(v_grid[k]), omega=float(om_grid[k])), traj


@dataclass
class RecoveryConfig:
    omega: float = 0.5
    dt: float = 0.05


def recovery_rotate(state_pose, cfg=None):
    """Full in-place rotation: (v=0, omega) commands summing to >= 2 pi."""
    cfg = cfg or RecoveryConfig()
    n = int(math.ceil(2.0 * math.pi / (abs(cfg.omega) * cfg.dt)))
    return [VelocityCommand(v=0.0, omega=cfg.omega) for _ in range(n)]


@dataclass
class CoverageRegion:
    origin: tuple       # world (x, y) of the region corner
    extent: tuple       # (width, height) in the region frame
    orientation: float = 0.0


@dataclass
class CoveragePlan:
    path: Path
    rows: int
    coverage_fraction: float


def _region_to_world(region, u, v):
    c, s = math.cos(region.orientation), math.sin(region.orientation)
    return (region.origin[0] + c * u - s * v,
            region.origin[1] + s * u + c * v)


def _free_mask(costmap):
    return (costmap.cost < COST_INSCRIBED) | (costmap.cost == COST_UNKNOWN)


def _region_cells(costmap, region):
    ny, nx = costmap.shape
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    cx = costmap.origin[0] + (ii + 0.5) * costmap.resolution
    cy = costmap.origin[1] + (jj + 0.5) * costmap.resolution
    c, s = math.cos(region.orientation), math.sin(region.orientation)
    u = c * (cx - region.origin[0]) + s * (cy - region.origin[1])
    v = -s * (cx - region.origin[0]) + c * (cy - region.origin[1])
    inside = (u >= 0) & (u <= region.extent[0]) & (v >= 0) & (v <= region.extent[1])
    return inside


def _reachable_mask(costmap, free, seed_cell):
    lbl, _ = _label_components(free)
    si, sj = seed_cell
    if not (0 <= sj < lbl.shape[0] and 0 <= si < lbl.shape[1]):
        return np.zeros_like(free)
    seed_label = lbl[sj, si]
    if seed_label == 0:
        return np.zeros_like(free)
    return lbl == seed_label


def _label_components(mask):
    from scipy import ndimage
    structure = np.ones((3, 3), dtype=int)  # 8-connectivity
    return ndimage.label(mask, structure=structure)


def plan_coverage(region, footprint_width, costmap, start=None,
                  unknown_cost=20.0, topup=True):
    """Boustrophedon rows spaced one footprint apart, with A* detours.

    Rows are clipped around blocked cells; clipped segments and consecutive
    rows are joined by A* paths. Remaining reachable-but-uncovered cells are
    visited by appended detours when topup is set. Returns the path, the
    row count, and the covered fraction of reachable free cells.
    """
    if footprint_width <= 0:
        raise ValueError("footprint_width must be > 0")
    w, h = region.extent
    n_rows = max(1, int(math.ceil(h / footprint_width)))
    res = costmap.resolution

    # build row segments (clipped to free cells)
    segments = []   # list of lists of world points, row by row
    for r in range(n_rows):
        v = min((r + 0.5) * footprint_width, h - footprint_width / 2.0)
        v = max(v, min(h / 2.0, footprint_width / 2.0))
        n_pts = max(int(math.ceil(w / (res * 0.5))), 2)
        us = np.linspace(0.0, w, n_pts)
        if r % 2 == 1:
            us = us[::-1]
        run = []
        row_segs = []
        for u in us:
            x, y = _region_to_world(region, float(u), float(v))
            i, j = costmap.cell_of(x, y)
            ok = costmap.in_bounds(i, j) and not costmap.is_blocked(i, j)
            if ok:
                run.append((x, y))
            elif run:
                row_segs.append(run)
                run = []
        if run:
            row_segs.append(run)
        segments.append(row_segs)

    flat = [seg for row in segments for seg in row if len(seg) >= 1]
    if not flat:
        return CoveragePlan(path=Path(poses=[], cost=0.0), rows=n_rows,
                            coverage_fraction=0.0)

    poses = []
    total = 0.0

    def extend(points):
        nonlocal total
        for x, y in points:
            if poses:
                px, py, _ = poses[-1]
                d = math.hypot(x - px, y - py)
                if d < 1e-9:
                    continue
                total += d
                poses[-1] = (px, py, math.atan2(y - py, x - px))
            poses.append((x, y, poses[-1][2] if poses else 0.0))

    def connect(target):
        """Straight connector when free, otherwise an A* detour."""
        nonlocal total
        if not poses:
            return True
        a = (poses[-1][0], poses[-1][1])
        if _segment_free(costmap, a, target, res * 0.5):
            extend([target])
            return True
        try:
            link = plan_astar(costmap, a, target, unknown_cost=unknown_cost)
        except InvalidEndpointError:
            return False
        if link is None:
            return False
        extend([(x, y) for x, y, _ in link.poses])
        extend([target])
        return True

    if start is not None:
        extend([tuple(start[:2])])
    for seg in flat:
        if connect(seg[0]):
            extend(seg[1:])
        # unreachable segments are skipped; accounting reflects that

    # coverage accounting over reachable free cells inside the region
    inside = _region_cells(costmap, region)
    free = _free_mask(costmap)
    if poses:
        seed = costmap.cell_of(poses[0][0], poses[0][1])
    else:
        seed = costmap.cell_of(*flat[0][0])
    reachable = _reachable_mask(costmap, free, seed)
    target_cells = inside & reachable
    n_target = int(np.count_nonzero(target_cells))
    if n_target == 0:
        return CoveragePlan(path=Path(poses=poses, cost=total), rows=n_rows,
                            coverage_fraction=0.0)

    def covered_mask():
        pts = _densify(poses, res * 0.5)
        if not pts:
            return np.zeros_like(target_cells)
        tree = cKDTree(np.asarray(pts))
        jj, ii = np.nonzero(target_cells)
        centers = np.column_stack([
            costmap.origin[0] + (ii + 0.5) * res,
            costmap.origin[1] + (jj + 0.5) * res])
        d, _ = tree.query(centers)
        out = np.zeros_like(target_cells)
        out[jj[d <= footprint_width / 2.0 + res * 0.5],
            ii[d <= footprint_width / 2.0 + res * 0.5]] = True
        return out

    cov = covered_mask()
    if topup:
        abandoned = np.zeros_like(cov)
        for _ in range(200):
            missing = target_cells & ~cov & ~abandoned
            if not missing.any():
                break
            jj, ii = np.nonzero(missing)
            px, py = poses[-1][0], poses[-1][1]
            d2 = (costmap.origin[0] + (ii + 0.5) * res - px) ** 2 + \
                 (costmap.origin[1] + (jj + 0.5) * res - py) ** 2
            k = int(np.argmin(d2))
            tgt = (costmap.origin[0] + (ii[k] + 0.5) * res,
                   costmap.origin[1] + (jj[k] + 0.5) * res)
            if not connect(tgt):
                abandoned[jj[k], ii[k]] = True
                continue
            cov = covered_mask()

    fraction = float(np.count_nonzero(cov & target_cells)) / n_target
    return CoveragePlan(path=Path(poses=poses, cost=total), rows=n_rows,
                        coverage_fraction=fraction)


def _densify(poses, step):
    pts = []
    for k in range(len(poses)):
        x, y = poses[k][0], poses[k][1]
        if k:
            px, py = poses[k - 1][0], poses[k - 1][1]
            d = math.hypot(x - px, y - py)
            n = max(int(math.ceil(d / step)), 1)
            for m in range(1, n + 1):
                t = m / n
                pts.append((px + t * (x - px), py + t * (y - py)))
        else:
            pts.append((x, y))
    return pts
