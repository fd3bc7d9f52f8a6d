"""Procedural lunar environment: terrain, rocks, buried volatiles, ray casting.

The world is generated deterministically from a seeded config with a fixed
draw order (rocks, deposits, CubeSat, feature points) so that regeneration
from the same config is bit-identical on any platform.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

LUNAR_GRAVITY = 1.62  # m/s^2

# raycast surface kinds
HIT_TERRAIN = "terrain"
HIT_ROCK = "rock"


@dataclass
class DepositSpec:
    type_label: str
    mass: float
    position: tuple | None = None  # None -> seeded-random placement


@dataclass
class WorldConfig:
    seed: int = 0
    box_extent: tuple = (20.0, 20.0)
    rock_count: int = 12
    rock_radius_range: tuple = (0.3, 0.6)
    deposit_specs: list = field(default_factory=list)
    terrain_amplitude: float = 0.15
    cell_size: float = 0.25
    grid_dims: tuple = (129, 129)
    home_base_pose: tuple = (0.0, 0.0, 0.0)
    cubesat_position: tuple | None = None  # None -> seeded-random placement
    feature_point_count: int = 150
    volatile_sensor_radius: float = 2.0

    def validate(self):
        problems = []
        if self.cell_size <= 0:
            problems.append("cell_size must be > 0")
        if self.rock_count < 0:
            problems.append("rock_count must be >= 0")
        rmin, rmax = self.rock_radius_range
        if rmin > rmax:
            problems.append("rock_radius_range min > max")
        if rmin <= 0 or rmax <= 0:
            problems.append("rock radii must be > 0")
        nx, ny = self.grid_dims
        if nx < 2 or ny < 2:
            problems.append("grid_dims must be at least 2x2")
        for spec in self.deposit_specs:
            if spec.mass <= 0:
                problems.append(f"deposit '{spec.type_label}' mass must be > 0")
        if self.cell_size > 0 and nx >= 2 and ny >= 2:
            ex = (nx - 1) * self.cell_size
            ey = (ny - 1) * self.cell_size
            if self.box_extent[0] > ex or self.box_extent[1] > ey:
                problems.append("box_extent exceeds terrain bounds")
        if self.volatile_sensor_radius <= 0:
            problems.append("volatile_sensor_radius must be > 0")
        if problems:
            raise ConfigurationError("invalid world config: " + "; ".join(problems),
                                     problems)


@dataclass
class Heightfield:
    origin: tuple          # (x, y) of node [0, 0]
    cell_size: float
    elevations: np.ndarray  # shape (ny, nx), elevations[j, i] at node (i, j)

    @property
    def bounds(self):
        ny, nx = self.elevations.shape
        x0, y0 = self.origin
        return (x0, y0, x0 + (nx - 1) * self.cell_size, y0 + (ny - 1) * self.cell_size)

    def contains(self, x, y):
        x0, y0, x1, y1 = self.bounds
        return np.logical_and.reduce((x >= x0, x <= x1, y >= y0, y <= y1))


@dataclass
class Rock:
    center: np.ndarray  # (3,), z on the terrain surface
    radius: float


@dataclass
class VolatileDeposit:
    id: int
    type_label: str
    position: np.ndarray  # (3,), z strictly below surface
    total_mass: float
    remaining_mass: float


@dataclass
class World:
    config: WorldConfig
    heightfield: Heightfield
    rocks: list
    deposits: list
    home_base_pose: tuple
    cubesat_position: np.ndarray
    feature_points: np.ndarray  # (n, 3) surface points for stereo tracking
    gravity: float = LUNAR_GRAVITY

    # cached rock arrays for vectorized ray casting
    _rock_centers: np.ndarray = None
    _rock_radii: np.ndarray = None

    def __post_init__(self):
        self._rock_centers = (np.array([r.center for r in self.rocks])
                              if self.rocks else np.zeros((0, 3)))
        self._rock_radii = (np.array([r.radius for r in self.rocks])
                            if self.rocks else np.zeros(0))

    def digest(self):
        """Stable hex digest of the generated world (determinism checks)."""
        h = hashlib.sha256()
        cfg = self.config
        h.update(json.dumps({
            "seed": cfg.seed, "box": list(cfg.box_extent),
            "rocks": cfg.rock_count, "rr": list(cfg.rock_radius_range),
            "amp": cfg.terrain_amplitude, "cell": cfg.cell_size,
            "dims": list(cfg.grid_dims),
        }, sort_keys=True).encode())
        h.update(self.heightfield.elevations.tobytes())
        h.update(self._rock_centers.tobytes())
        h.update(self._rock_radii.tobytes())
        for d in self.deposits:
            h.update(d.type_label.encode())
            h.update(np.asarray(d.position).tobytes())
            h.update(np.float64(d.total_mass).tobytes())
            h.update(np.float64(d.remaining_mass).tobytes())
        h.update(np.asarray(self.home_base_pose, dtype=float).tobytes())
        h.update(np.asarray(self.cubesat_position, dtype=float).tobytes())
        h.update(self.feature_points.tobytes())
        return h.hexdigest()

    def to_dict(self):
        """Plain-data form for the world-dump CLI subcommand."""
        return {
            "digest": self.digest(),
            "gravity": self.gravity,
            "terrain": {
                "origin": list(self.heightfield.origin),
                "cell_size": self.heightfield.cell_size,
                "dims": [int(self.heightfield.elevations.shape[1]),
                         int(self.heightfield.elevations.shape[0])],
                "elevations": [[float(v) for v in row]
                               for row in self.heightfield.elevations],
            },
            "rocks": [{"center": [float(v) for v in r.center],
                       "radius": float(r.radius)} for r in self.rocks],
            "deposits": [{"id": d.id, "type": d.type_label,
                          "position": [float(v) for v in d.position],
                          "total_mass": float(d.total_mass),
                          "remaining_mass": float(d.remaining_mass)}
                         for d in self.deposits],
            "home_base_pose": [float(v) for v in self.home_base_pose],
            "cubesat_position": [float(v) for v in self.cubesat_position],
        }


def _terrain_elevations(cfg, rng):
    """Seeded sum of radial-cosine bumps and craters on the node grid."""
    nx, ny = cfg.grid_dims
    ex, ey = (nx - 1) * cfg.cell_size, (ny - 1) * cfg.cell_size
    xs = -ex / 2.0 + cfg.cell_size * np.arange(nx)
    ys = -ey / 2.0 + cfg.cell_size * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)
    z = np.zeros((ny, nx))
    n_bumps = 16
    # draw bump parameters even when amplitude is zero to keep the
    # downstream draw order independent of terrain settings
    cx = rng.uniform(-ex / 2.0, ex / 2.0, n_bumps)
    cy = rng.uniform(-ey / 2.0, ey / 2.0, n_bumps)
    radius = rng.uniform(0.12, 0.30, n_bumps) * min(ex, ey)
    amp = rng.uniform(-1.0, 1.0, n_bumps) * cfg.terrain_amplitude
    if cfg.terrain_amplitude > 0:
        for k in range(n_bumps):
            r = np.hypot(gx - cx[k], gy - cy[k])
            mask = r < radius[k]
            z[mask] += amp[k] * 0.5 * (1.0 + np.cos(np.pi * r[mask] / radius[k]))
    return z


def height_at(world, x, y):
    """Bilinear terrain elevation at (x, y); exact at grid nodes."""
    hf = world.heightfield
    if not hf.contains(x, y):
        raise DomainError(f"height query ({x:.3f}, {y:.3f}) outside terrain bounds")
    return float(_height_many(hf, np.array([x]), np.array([y]))[0])


def _height_many(hf, x, y):
    """Vectorized bilinear interpolation. Inputs must be inside bounds."""
    ny, nx = hf.elevations.shape
    x0, y0 = hf.origin
    fx = (x - x0) / hf.cell_size
    fy = (y - y0) / hf.cell_size
    i = np.clip(fx.astype(int), 0, nx - 2)
    j = np.clip(fy.astype(int), 0, ny - 2)
    tx = fx - i
    ty = fy - j
    z = hf.elevations
    return ((1 - tx) * (1 - ty) * z[j, i] + tx * (1 - ty) * z[j, i + 1]
            + (1 - tx) * ty * z[j + 1, i] + tx * ty * z[j + 1, i + 1])


def clamp_to_bounds(world, x, y, margin=0.0):
    """Clip a point into the terrain bounds (with an optional margin)."""
    x0, y0, x1, y1 = world.heightfield.bounds
    return (min(max(x, x0 + margin), x1 - margin),
            min(max(y, y0 + margin), y1 - margin))


def terrain_gradient(world, x, y):
    """(dz/dx, dz/dy) of the bilinear surface at (x, y)."""
    hf = world.heightfield
    if not hf.contains(x, y):
        raise DomainError("gradient query outside terrain bounds")
    ny, nx = hf.elevations.shape
    x0, y0 = hf.origin
    fx = (x - x0) / hf.cell_size
    fy = (y - y0) / hf.cell_size
    i = int(np.clip(int(fx), 0, nx - 2))
    j = int(np.clip(int(fy), 0, ny - 2))
    tx = fx - i
    ty = fy - j
    z = hf.elevations
    dzdx = ((1 - ty) * (z[j, i + 1] - z[j, i]) + ty * (z[j + 1, i + 1] - z[j + 1, i]))
    dzdy = ((1 - tx) * (z[j + 1, i] - z[j, i]) + tx * (z[j + 1, i + 1] - z[j, i + 1]))
    return dzdx / hf.cell_size, dzdy / hf.cell_size


def _ray_terrain_ranges(world, origin, dirs, max_range):
    """March-and-bisect terrain intersection for a batch of unit rays.

    Marching step is half a grid cell; sign changes of (ray height - terrain)
    are refined by bisection to ~1e-12 m.
    """
    hf = world.heightfield
    n = dirs.shape[0]
    step = 0.5 * hf.cell_size
    n_steps = int(np.ceil(max_range / step)) + 1
    ts = np.minimum(np.arange(n_steps + 1) * step, max_range)
    px = origin[0] + np.outer(dirs[:, 0], ts)
    py = origin[1] + np.outer(dirs[:, 1], ts)
    pz = origin[2] + np.outer(dirs[:, 2], ts)
    inside = hf.contains(px, py)
    f = np.full(px.shape, np.inf)
    if inside.any():
        f[inside] = pz[inside] - _height_many(hf, px[inside], py[inside])
    below = (f < 0.0) & inside
    hit_any = below.any(axis=1)
    ranges = np.full(n, np.inf)
    if not hit_any.any():
        return ranges
    first = np.argmax(below, axis=1)
    for k in np.flatnonzero(hit_any):
        idx = first[k]
        if idx == 0:
            ranges[k] = 0.0
            continue
        lo, hi = ts[idx - 1], ts[idx]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            x = origin[0] + dirs[k, 0] * mid
            y = origin[1] + dirs[k, 1] * mid
            z = origin[2] + dirs[k, 2] * mid
            if not hf.contains(x, y):
                lo = mid
                continue
            if z - _height_many(hf, np.array([x]), np.array([y]))[0] < 0.0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-12:
                break
        ranges[k] = 0.5 * (lo + hi)
    return ranges


def _ray_rock_ranges(world, origin, dirs, max_range, exclude=None):
    """Analytic nearest ray-sphere intersection per ray; inf when none."""
    n = dirs.shape[0]
    centers, radii = world._rock_centers, world._rock_radii
    if exclude is not None:
        keep = np.arange(len(radii)) != exclude
        centers, radii = centers[keep], radii[keep]
    if len(radii) == 0:
        return np.full(n, np.inf)
    oc = origin[None, :] - centers              # (m, 3)
    b = dirs @ oc.T                             # (n, m)
    c = (oc * oc).sum(axis=1)[None, :] - radii[None, :] ** 2
    disc = b * b - c
    valid = disc >= 0.0
    sq = np.sqrt(np.where(valid, disc, 0.0))
    t1 = -b - sq
    t2 = -b + sq
    t = np.where(t1 > 1e-12, t1, np.where(t2 > 1e-12, t2, np.inf))
    t = np.where(valid, t, np.inf)
    t = np.where(t <= max_range, t, np.inf)
    return t.min(axis=1)


def raycast_fan(world, origin, directions, max_range):
    """Batch raycast from a common origin.

    Returns (ranges, kinds): range inf and kind "" where nothing is hit
    within max_range.
    """
    dirs = np.asarray(directions, dtype=float)
    origin = np.asarray(origin, dtype=float)
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise DomainError("raycast directions must be unit vectors")
    if max_range <= 0:
        raise DomainError("max_range must be > 0")
    t_terrain = _ray_terrain_ranges(world, origin, dirs, max_range)
    t_rock = _ray_rock_ranges(world, origin, dirs, max_range)
    ranges = np.minimum(t_terrain, t_rock)
    kinds = np.where(ranges > max_range, "",
                     np.where(t_rock < t_terrain, HIT_ROCK, HIT_TERRAIN))
    ranges = np.where(ranges > max_range, np.inf, ranges)
    return ranges, kinds


def raycast(world, origin, direction, max_range):
    """Nearest terrain/rock intersection along a single unit ray.

    Returns (range, surface_kind) or None when nothing is hit.
    """
    ranges, kinds = raycast_fan(world, origin, np.asarray(direction)[None, :],
                                max_range)
    if not np.isfinite(ranges[0]):
        return None
    return float(ranges[0]), str(kinds[0])


def los_clear(world, origin, target, exclude_rock=None, margin=1e-3):
    """True when the segment origin->target is unobstructed.

    exclude_rock skips one rock index, so a rock's own summit can be
    sighted without the sphere occluding itself.
    """
    origin = np.asarray(origin, dtype=float)
    target = np.asarray(target, dtype=float)
    dist = float(np.linalg.norm(target - origin))
    if dist < margin:
        return True
    d = ((target - origin) / dist)[None, :]
    span = max(dist - margin, margin)
    t_terrain = _ray_terrain_ranges(world, origin, d, span)[0]
    t_rock = _ray_rock_ranges(world, origin, d, span, exclude=exclude_rock)[0]
    return not (np.isfinite(t_terrain) or np.isfinite(t_rock))


def sense_volatiles(world, position, radius):
    """Proximity volatile sensor: live deposits within horizontal radius.

    Returns a list of (deposit id, type_label, horizontal range).
    """
    if radius <= 0:
        raise DomainError("sensor radius must be > 0")
    out = []
    px, py = float(position[0]), float(position[1])
    for d in world.deposits:
        if d.remaining_mass <= 0.0:
            continue
        r = float(np.hypot(d.position[0] - px, d.position[1] - py))
        if r <= radius:
            out.append((d.id, d.type_label, r))
    return out


def _clear_of_rocks(xy, rocks):
    return all(np.hypot(xy[0] - r.center[0], xy[1] - r.center[1]) > r.radius
               for r in rocks)


def generate_world(config):
    """Deterministically build a World from its config.

    Draw order is fixed: terrain bumps, rocks, deposits, CubeSat, feature
    points. Random deposit sites are rejection-sampled to keep them off
    rock footprints; explicitly placed ones are validated instead.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    elev = _terrain_elevations(config, rng)
    nx, ny = config.grid_dims
    ex, ey = (nx - 1) * config.cell_size, (ny - 1) * config.cell_size
    hf = Heightfield(origin=(-ex / 2.0, -ey / 2.0), cell_size=config.cell_size,
                     elevations=elev)
    shell = World(config=config, heightfield=hf, rocks=[], deposits=[],
                  home_base_pose=tuple(config.home_base_pose),
                  cubesat_position=np.zeros(3), feature_points=np.zeros((0, 3)))

    bx, by = config.box_extent
    rocks = []
    for _ in range(config.rock_count):
        x = rng.uniform(-bx / 2.0, bx / 2.0)
        y = rng.uniform(-by / 2.0, by / 2.0)
        radius = rng.uniform(*config.rock_radius_range)
        z = height_at(shell, x, y)
        rocks.append(Rock(center=np.array([x, y, z]), radius=radius))
    shell.rocks = rocks
    shell.__post_init__()

    deposits = []
    for idx, spec in enumerate(config.deposit_specs):
        if spec.position is None:
            for attempt in range(1000):
                x = rng.uniform(-bx / 2.0, bx / 2.0)
                y = rng.uniform(-by / 2.0, by / 2.0)
                if _clear_of_rocks((x, y), rocks):
                    break
            else:
                raise ConfigurationError(
                    "could not place deposit clear of rocks after 1000 draws")
            depth = rng.uniform(0.4, 0.9)
            z = height_at(shell, x, y) - depth
        else:
            x, y, z = spec.position
            surface = height_at(shell, x, y)
            if z >= surface:
                raise ConfigurationError(
                    f"deposit '{spec.type_label}' must lie strictly below the "
                    f"surface (z={z:.3f}, surface={surface:.3f})")
            if not _clear_of_rocks((x, y), rocks):
                raise ConfigurationError(
                    f"deposit '{spec.type_label}' lies under a rock footprint")
        deposits.append(VolatileDeposit(id=idx, type_label=spec.type_label,
                                        position=np.array([x, y, z]),
                                        total_mass=spec.mass,
                                        remaining_mass=spec.mass))
    shell.deposits = deposits

    if config.cubesat_position is None:
        for attempt in range(1000):
            x = rng.uniform(-bx / 2.0, bx / 2.0)
            y = rng.uniform(-by / 2.0, by / 2.0)
            if _clear_of_rocks((x, y), rocks):
                break
        else:
            raise ConfigurationError("could not place CubeSat clear of rocks")
        cubesat = np.array([x, y, height_at(shell, x, y) + 0.3])
    else:
        cubesat = np.asarray(config.cubesat_position, dtype=float)
    shell.cubesat_position = cubesat

    x0, y0, x1, y1 = hf.bounds
    margin = min(config.cell_size, 0.25 * (x1 - x0), 0.25 * (y1 - y0))
    fx = rng.uniform(x0 + margin, x1 - margin, config.feature_point_count)
    fy = rng.uniform(y0 + margin, y1 - margin, config.feature_point_count)
    fz = _height_many(hf, fx, fy)
    shell.feature_points = np.column_stack([fx, fy, fz])

    return shell
