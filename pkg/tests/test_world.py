import numpy as np
import pytest

from lunarsim.errors import ConfigurationError, DomainError
from lunarsim.world import (DepositSpec, WorldConfig, generate_world, height_at,
                            raycast, raycast_fan, sense_volatiles)


def flat_config(**kw):
    base = dict(seed=3, box_extent=(20.0, 20.0), rock_count=0,
                rock_radius_range=(0.3, 0.6), deposit_specs=[],
                terrain_amplitude=0.0, cell_size=0.25, grid_dims=(129, 129),
                feature_point_count=20)
    base.update(kw)
    return WorldConfig(**base)


def test_same_config_regenerates_identical_world():
    cfg = WorldConfig(seed=42, rock_count=25, terrain_amplitude=0.3,
                      deposit_specs=[DepositSpec("ice", 8.0)])
    w1 = generate_world(cfg)
    w2 = generate_world(cfg)
    assert w1.digest() == w2.digest()


def test_different_seed_changes_digest():
    w1 = generate_world(WorldConfig(seed=1, rock_count=5))
    w2 = generate_world(WorldConfig(seed=2, rock_count=5))
    assert w1.digest() != w2.digest()


def test_flat_world_degenerate_config():
    w = generate_world(flat_config())
    assert len(w.rocks) == 0
    for x, y in [(0.0, 0.0), (3.7, -2.2), (-9.9, 9.9)]:
        assert height_at(w, x, y) == 0.0


def test_all_rocks_inside_box():
    cfg = flat_config(rock_count=50, terrain_amplitude=0.2)
    w = generate_world(cfg)
    assert len(w.rocks) == 50
    for r in w.rocks:
        assert -10.0 <= r.center[0] <= 10.0
        assert -10.0 <= r.center[1] <= 10.0
        assert 0.3 <= r.radius <= 0.6


def test_rock_bounds_many_seeds():
    # containment and radius bounds over many seeds (small grids keep it fast)
    for seed in range(1000):
        cfg = WorldConfig(seed=seed, box_extent=(8.0, 6.0), rock_count=6,
                          rock_radius_range=(0.2, 0.5), grid_dims=(41, 41),
                          cell_size=0.25, terrain_amplitude=0.1,
                          feature_point_count=0)
        w = generate_world(cfg)
        for r in w.rocks:
            assert -4.0 <= r.center[0] <= 4.0
            assert -3.0 <= r.center[1] <= 3.0
            assert 0.2 <= r.radius <= 0.5


def test_invalid_configs_raise():
    with pytest.raises(ConfigurationError):
        generate_world(flat_config(cell_size=0.0))
    with pytest.raises(ConfigurationError):
        generate_world(flat_config(rock_radius_range=(0.9, 0.3)))
    with pytest.raises(ConfigurationError):
        generate_world(flat_config(deposit_specs=[DepositSpec("ice", -1.0)]))
    with pytest.raises(ConfigurationError):
        # box larger than the terrain
        generate_world(flat_config(box_extent=(100.0, 100.0)))


def test_gravity_constant():
    assert generate_world(flat_config()).gravity == 1.62


def test_height_at_grid_node_identity():
    cfg = flat_config(terrain_amplitude=0.4, seed=11)
    w = generate_world(cfg)
    hf = w.heightfield
    x0, y0 = hf.origin
    for i, j in [(0, 0), (10, 3), (64, 64), (128, 128)]:
        x = x0 + i * hf.cell_size
        y = y0 + j * hf.cell_size
        assert height_at(w, x, y) == pytest.approx(hf.elevations[j, i], abs=1e-12)


def test_height_at_bilinear_hand_value():
    # unit cell with corner elevations (0, 0, 0, 1):
    # z(cx, cy) = 0.5 * 0.5 * 1 = 0.25 by the bilinear formula
    w = generate_world(flat_config(grid_dims=(2, 2), cell_size=1.0,
                                   box_extent=(1.0, 1.0)))
    w.heightfield.elevations = np.array([[0.0, 0.0], [0.0, 1.0]])
    assert height_at(w, 0.0, 0.0) == pytest.approx(0.25, abs=1e-12)


def test_height_at_continuous_across_cell_edges():
    w = generate_world(flat_config(terrain_amplitude=0.5, seed=7))
    hf = w.heightfield
    x0, y0 = hf.origin
    # sample points on interior vertical edges, approached from both cells
    for i in range(1, 20):
        x = x0 + i * hf.cell_size
        for frac in (0.25, 0.5, 0.75):
            y = y0 + (5 + frac) * hf.cell_size
            left = height_at(w, x - 1e-13, y)
            right = height_at(w, x + 1e-13, y)
            assert abs(left - right) < 1e-12


def test_height_at_out_of_bounds():
    w = generate_world(flat_config())
    with pytest.raises(DomainError):
        height_at(w, 1000.0, 0.0)


def test_raycast_horizontal_over_flat_world():
    w = generate_world(flat_config())
    assert raycast(w, (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 20.0) is None


def test_raycast_vertical_down():
    w = generate_world(flat_config())
    hit = raycast(w, (0.0, 0.0, 2.0), (0.0, 0.0, -1.0), 10.0)
    assert hit is not None
    rng, kind = hit
    assert rng == pytest.approx(2.0, abs=1e-9)
    assert kind == "terrain"


def test_raycast_sphere_on_axis():
    # ray-sphere quadratic: rock radius 0.5 centered 5 m ahead -> range 4.5
    w = generate_world(flat_config())
    from lunarsim.world import Rock
    w.rocks = [Rock(center=np.array([5.0, 0.0, 1.0]), radius=0.5)]
    w.__post_init__()
    rng, kind = raycast(w, (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 20.0)
    assert rng == pytest.approx(4.5, abs=1e-9)
    assert kind == "rock"


def test_raycast_requires_unit_direction():
    w = generate_world(flat_config())
    with pytest.raises(DomainError):
        raycast(w, (0.0, 0.0, 1.0), (2.0, 0.0, 0.0), 10.0)


def test_raycast_monotone_in_max_range():
    w = generate_world(flat_config(rock_count=30, terrain_amplitude=0.3, seed=9))
    rng_src = np.random.default_rng(5)
    for _ in range(50):
        origin = np.array([rng_src.uniform(-8, 8), rng_src.uniform(-8, 8), 1.0])
        ang = rng_src.uniform(-np.pi, np.pi)
        pitch = rng_src.uniform(-0.3, 0.1)
        d = np.array([np.cos(ang) * np.cos(pitch), np.sin(ang) * np.cos(pitch),
                      np.sin(pitch)])
        far = raycast(w, origin, d, 20.0)
        near = raycast(w, origin, d, 5.0)
        if near is not None:
            assert far is not None
            assert near[0] == pytest.approx(far[0], abs=1e-9)
        elif far is not None:
            assert far[0] > 5.0


def test_raycast_fan_matches_scalar():
    w = generate_world(flat_config(rock_count=10, terrain_amplitude=0.2, seed=13))
    angs = np.linspace(-np.pi, np.pi, 37)
    dirs = np.column_stack([np.cos(angs), np.sin(angs), np.full_like(angs, -0.05)])
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    ranges, kinds = raycast_fan(w, (0.0, 0.0, 0.8), dirs, 20.0)
    for k in range(len(angs)):
        hit = raycast(w, (0.0, 0.0, 0.8), dirs[k], 20.0)
        if hit is None:
            assert not np.isfinite(ranges[k])
        else:
            assert ranges[k] == pytest.approx(hit[0], abs=1e-12)
            assert kinds[k] == hit[1]


def test_deposits_below_surface_and_clear_of_rocks():
    for seed in range(25):
        cfg = WorldConfig(seed=seed, rock_count=20, terrain_amplitude=0.3,
                          deposit_specs=[DepositSpec("ice", 10.0),
                                         DepositSpec("ethane", 5.0)],
                          feature_point_count=0)
        w = generate_world(cfg)
        for d in w.deposits:
            surface = height_at(w, d.position[0], d.position[1])
            assert d.position[2] < surface
            for r in w.rocks:
                assert np.hypot(d.position[0] - r.center[0],
                                d.position[1] - r.center[1]) > r.radius


def test_explicit_deposit_above_surface_rejected():
    cfg = flat_config(deposit_specs=[DepositSpec("ice", 10.0, (1.0, 1.0, 0.5))])
    with pytest.raises(ConfigurationError):
        generate_world(cfg)


def test_sense_volatiles_distance_filter():
    cfg = flat_config(deposit_specs=[
        DepositSpec("ice", 10.0, (1.0, 0.0, -0.5)),
        DepositSpec("methanol", 4.0, (3.0, 0.0, -0.5)),
    ])
    w = generate_world(cfg)
    hits = sense_volatiles(w, (0.0, 0.0), 2.0)
    assert len(hits) == 1
    dep_id, label, rng = hits[0]
    assert label == "ice"
    assert rng == pytest.approx(1.0, abs=1e-12)


def test_sense_volatiles_zero_range_and_empty():
    cfg = flat_config(deposit_specs=[DepositSpec("ice", 10.0, (0.0, 0.0, -0.5))])
    w = generate_world(cfg)
    hits = sense_volatiles(w, (0.0, 0.0), 2.0)
    assert hits[0][2] == 0.0
    assert sense_volatiles(w, (9.0, 9.0), 2.0) == []


def test_sense_volatiles_skips_exhausted():
    cfg = flat_config(deposit_specs=[DepositSpec("ice", 10.0, (0.0, 0.0, -0.5))])
    w = generate_world(cfg)
    w.deposits[0].remaining_mass = 0.0
    assert sense_volatiles(w, (0.0, 0.0), 2.0) == []
