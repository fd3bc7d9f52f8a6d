"""2-D log-odds occupancy mapping and costmap inflation.

Ray updates use exact grid-line traversal (every cell the segment crosses,
each exactly once), vectorized across a whole scan. Inflation uses a
euclidean distance transform: occupied cells become lethal, cells within
the robot radius inscribed, and cost decays exponentially beyond that.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

COST_FREE = 0
COST_SCALED_MAX = 252
COST_INSCRIBED = 253
COST_LETHAL = 254
COST_UNKNOWN = 255


@dataclass
class SensorModel:
    l_hit: float = 0.85
    l_miss: float = -0.4
    clamp: float = 4.0
    occupied_prob: float = 0.65
    height_threshold: float = 0.15   # stereo points below this are ground
    no_return_range: float = 20.0    # free-space carve distance, m

    @property
    def occupied_log_odds(self):
        p = self.occupied_prob
        return math.log(p / (1.0 - p))


@dataclass
class OccupancyGrid:
    origin: tuple            # world (x, y) of the lower-left corner of cell (0,0)
    resolution: float
    log_odds: np.ndarray     # (ny, nx)

    @staticmethod
    def blank(origin, resolution, shape):
        return OccupancyGrid(origin=tuple(origin), resolution=resolution,
                             log_odds=np.zeros(shape))

    @property
    def shape(self):
        return self.log_odds.shape

    def cell_of(self, x, y):
        i = int(math.floor((x - self.origin[0]) / self.resolution))
        j = int(math.floor((y - self.origin[1]) / self.resolution))
        return i, j

    def center_of(self, i, j):
        return (self.origin[0] + (i + 0.5) * self.resolution,
                self.origin[1] + (j + 0.5) * self.resolution)

    def in_bounds(self, i, j):
        ny, nx = self.log_odds.shape
        return 0 <= i < nx and 0 <= j < ny

    def copy(self):
        return OccupancyGrid(origin=self.origin, resolution=self.resolution,
                             log_odds=self.log_odds.copy())

    def to_pgm(self):
        """Plain-text portable graymap with origin/resolution in comments."""
        ny, nx = self.log_odds.shape
        prob = 1.0 - 1.0 / (1.0 + np.exp(self.log_odds))
        gray = np.round(255 * (1.0 - prob)).astype(int)
        lines = ["P2",
                 f"# origin {self.origin[0]:.6f} {self.origin[1]:.6f}",
                 f"# resolution {self.resolution:.6f}",
                 f"{nx} {ny}", "255"]
        for j in range(ny):
            lines.append(" ".join(str(v) for v in gray[j]))
        return "\n".join(lines) + "\n"


def _segment_cells(grid, start_xy, end_xy):
    """Cells crossed by each segment, via merged axis-crossing parameters.

    start_xy: (2,) common origin; end_xy: (n, 2). Returns (i, j, beam, t_mid)
    flat arrays covering every crossed cell exactly once per beam, ordered
    by t along each beam.
    """
    res = grid.resolution
    g0 = (np.asarray(start_xy, dtype=float) - np.asarray(grid.origin)) / res
    g1 = (np.asarray(end_xy, dtype=float) - np.asarray(grid.origin)) / res
    n = g1.shape[0]
    d = g1 - g0[None, :]

    ts = [np.zeros((n, 1)), np.ones((n, 1))]
    for axis in range(2):
        a0 = np.full(n, g0[axis])
        a1 = g1[:, axis]
        lo = np.minimum(a0, a1)
        hi = np.maximum(a0, a1)
        first = np.floor(lo) + 1.0
        count = np.maximum(0, np.floor(hi) - np.floor(lo)).astype(int)
        kmax = int(count.max()) if n else 0
        if kmax > 0:
            k = np.arange(kmax)[None, :]
            lines = first[:, None] + k
            da = d[:, axis][:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (lines - a0[:, None]) / da
            valid = (k < count[:, None]) & np.isfinite(t)
            t = np.where(valid & (t > 0.0) & (t < 1.0), t, 2.0)
            ts.append(t)
    tall = np.sort(np.concatenate(ts, axis=1), axis=1)
    t_a = tall[:, :-1]
    t_b = tall[:, 1:]
    seg_valid = (t_b > t_a + 1e-12) & (t_b <= 1.0)
    t_mid = 0.5 * (t_a + t_b)
    gi = np.floor(g0[0] + t_mid * d[:, 0][:, None]).astype(int)
    gj = np.floor(g0[1] + t_mid * d[:, 1][:, None]).astype(int)
    ny, nx = grid.log_odds.shape
    seg_valid &= (gi >= 0) & (gi < nx) & (gj >= 0) & (gj < ny)
    beam = np.broadcast_to(np.arange(n)[:, None], gi.shape)
    m = seg_valid
    return gi[m], gj[m], beam[m], t_mid[m]


def integrate_scan(grid, sensor_pose, scan, model, max_range=None):
    """Fold one lidar scan into the grid.

    Beams with a return add l_miss along the ray and l_hit at the hit cell;
    no-return beams add misses out to the no-return range. Log odds stay
    clamped.
    """
    out = grid.copy()
    x, y, th = sensor_pose
    angles = scan.start_angle + scan.angular_step * np.arange(len(scan.ranges))
    world_angles = th + angles
    ranges = np.asarray(scan.ranges, dtype=float)
    hit_mask = np.isfinite(ranges)
    free_reach = max_range if max_range is not None else model.no_return_range
    reach = np.where(hit_mask, ranges, free_reach)
    ends = np.column_stack([x + reach * np.cos(world_angles),
                            y + reach * np.sin(world_angles)])
    gi, gj, beam, _ = _segment_cells(out, (x, y), ends)
    if gi.size:
        # the hit cell is the last crossed cell of a returning beam
        last = np.full(len(ranges), -1, dtype=int)
        np.maximum.at(last, beam, np.arange(gi.size))
        is_hit_cell = np.zeros(gi.size, dtype=bool)
        sel = last[(last >= 0) & hit_mask]
        is_hit_cell[sel] = True
        np.add.at(out.log_odds, (gj[~is_hit_cell], gi[~is_hit_cell]),
                  model.l_miss)
        np.add.at(out.log_odds, (gj[is_hit_cell], gi[is_hit_cell]), model.l_hit)
    np.clip(out.log_odds, -model.clamp, model.clamp, out=out.log_odds)
    return out


def integrate_points(grid, sensor_pose, points_world, model,
                     ground_height=None):
    """Fold triangulated stereo points (already in world frame) into the grid.

    Points within height_threshold of the local ground are ignored; the
    rest mark hits with ray-traced misses from the sensor position.
    """
    out = grid.copy()
    x, y = sensor_pose[0], sensor_pose[1]
    kept = []
    for p in points_world:
        gz = ground_height(p[0], p[1]) if ground_height else 0.0
        if p[2] - gz >= model.height_threshold:
            kept.append((p[0], p[1]))
    if not kept:
        return out
    ends = np.asarray(kept, dtype=float)
    gi, gj, beam, _ = _segment_cells(out, (x, y), ends)
    if gi.size:
        last = np.zeros(len(kept), dtype=int) - 1
        np.maximum.at(last, beam, np.arange(gi.size))
        is_hit = np.zeros(gi.size, dtype=bool)
        is_hit[last[last >= 0]] = True
        np.add.at(out.log_odds, (gj[~is_hit], gi[~is_hit]), model.l_miss)
        np.add.at(out.log_odds, (gj[is_hit], gi[is_hit]), model.l_hit)
    np.clip(out.log_odds, -model.clamp, model.clamp, out=out.log_odds)
    return out


@dataclass
class Costmap:
    origin: tuple
    resolution: float
    cost: np.ndarray   # uint8: 0 free .. 252 scaled, 253 inscribed,
                       # 254 lethal, 255 unknown

    @property
    def shape(self):
        return self.cost.shape

    def cell_of(self, x, y):
        i = int(math.floor((x - self.origin[0]) / self.resolution))
        j = int(math.floor((y - self.origin[1]) / self.resolution))
        return i, j

    def center_of(self, i, j):
        return (self.origin[0] + (i + 0.5) * self.resolution,
                self.origin[1] + (j + 0.5) * self.resolution)

    def in_bounds(self, i, j):
        ny, nx = self.cost.shape
        return 0 <= i < nx and 0 <= j < ny

    def is_blocked(self, i, j):
        c = self.cost[j, i]
        return c == COST_LETHAL or c == COST_INSCRIBED

    def blocked_at(self, x, y):
        i, j = self.cell_of(x, y)
        if not self.in_bounds(i, j):
            return True
        return bool(self.is_blocked(i, j))

    def nav_cost(self, i, j, unknown_cost=20.0):
        c = self.cost[j, i]
        return unknown_cost if c == COST_UNKNOWN else float(c)

    def window(self, center_xy, half_extent):
        """Axis-aligned sub-costmap view around a world point."""
        i0, j0 = self.cell_of(center_xy[0] - half_extent,
                              center_xy[1] - half_extent)
        i1, j1 = self.cell_of(center_xy[0] + half_extent,
                              center_xy[1] + half_extent)
        ny, nx = self.cost.shape
        i0, j0 = max(i0, 0), max(j0, 0)
        i1, j1 = min(i1 + 1, nx), min(j1 + 1, ny)
        return Costmap(origin=(self.origin[0] + i0 * self.resolution,
                               self.origin[1] + j0 * self.resolution),
                       resolution=self.resolution,
                       cost=self.cost[j0:j1, i0:i1])


def inflate(grid, robot_radius, decay, model=None):
    """Inflate an occupancy grid into a planning costmap.

    Occupied cells become lethal; anything within robot_radius of a lethal
    cell is inscribed; beyond that cost decays exponentially with distance.
    Unknown cells (prior log odds) stay unknown unless inflation reaches
    them.
    """
    if robot_radius < 0:
        raise ValueError("robot_radius must be >= 0")
    model = model or SensorModel()
    occ = grid.log_odds > model.occupied_log_odds
    unknown = grid.log_odds == 0.0
    cost = np.zeros(grid.log_odds.shape, dtype=np.uint8)
    if occ.any():
        dist = ndimage.distance_transform_edt(~occ) * grid.resolution
        cost[occ] = COST_LETHAL
        inscribed = (~occ) & (dist <= robot_radius)
        cost[inscribed] = COST_INSCRIBED
        outside = (~occ) & (~inscribed)
        if decay > 1e-9:
            scaled = np.floor(COST_SCALED_MAX
                              * np.exp(-(dist - robot_radius) / decay))
            cost[outside] = np.clip(scaled[outside], 0, COST_SCALED_MAX)
        unknown_keep = unknown & (cost == 0)
        cost[unknown_keep] = COST_UNKNOWN
    else:
        cost[unknown] = COST_UNKNOWN
    return Costmap(origin=grid.origin, resolution=grid.resolution, cost=cost)
