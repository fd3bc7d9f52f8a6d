import math

import numpy as np
import pytest

from lunarsim.mapping import (COST_INSCRIBED, COST_LETHAL, COST_UNKNOWN,
                              Costmap, OccupancyGrid, SensorModel, inflate,
                              integrate_points, integrate_scan)
from lunarsim.vehicle import LidarScan

MODEL = SensorModel()


def blank_grid(extent=20.0, res=0.25):
    n = int(round(extent / res))
    return OccupancyGrid.blank(origin=(-extent / 2, -extent / 2), resolution=res,
                               shape=(n, n))


def single_beam_scan(rng_value, angle=0.0):
    return LidarScan(start_angle=angle, angular_step=math.radians(1.0),
                     ranges=np.array([rng_value]))


def test_hit_and_miss_updates():
    grid = blank_grid()
    scan = single_beam_scan(5.05)
    out = integrate_scan(grid, (0.07, 0.11, 0.0), scan, MODEL)
    hi, hj = out.cell_of(0.07 + 5.05, 0.11)
    assert out.log_odds[hj, hi] == pytest.approx(MODEL.l_hit)
    # a traversed cell in the middle of the beam got the miss update
    mi, mj = out.cell_of(2.0, 0.11)
    assert out.log_odds[mj, mi] == pytest.approx(MODEL.l_miss)
    # untouched cell stays at prior
    ui, uj = out.cell_of(0.0, 5.0)
    assert out.log_odds[uj, ui] == 0.0


def test_no_return_carves_to_max_range():
    grid = blank_grid()
    scan = single_beam_scan(float("inf"))
    out = integrate_scan(grid, (0.07, 0.11, 0.0), scan, MODEL, max_range=8.0)
    near_i, near_j = out.cell_of(7.5, 0.11)
    far_i, far_j = out.cell_of(9.0, 0.11)
    assert out.log_odds[near_j, near_i] == pytest.approx(MODEL.l_miss)
    assert out.log_odds[far_j, far_i] == 0.0


def test_repeated_hits_saturate_at_clamp():
    grid = blank_grid()
    scan = single_beam_scan(5.05)
    for _ in range(10):
        grid = integrate_scan(grid, (0.07, 0.11, 0.0), scan, MODEL)
    hi, hj = grid.cell_of(0.07 + 5.05, 0.11)
    assert grid.log_odds[hj, hi] == MODEL.clamp


def test_hit_then_equal_misses_return_to_prior():
    # additive log odds: one hit then hits/l_miss-balanced misses cancel
    model = SensorModel(l_hit=0.4, l_miss=-0.4)
    grid = blank_grid()
    scan_hit = single_beam_scan(5.05)
    grid = integrate_scan(grid, (0.07, 0.11, 0.0), scan_hit, model)
    hi, hj = grid.cell_of(0.07 + 5.05, 0.11)
    assert grid.log_odds[hj, hi] == pytest.approx(0.4)
    # a longer beam through the same cell gives it a miss
    scan_through = single_beam_scan(8.0)
    grid = integrate_scan(grid, (0.07, 0.11, 0.0), scan_through, model)
    assert grid.log_odds[hj, hi] == pytest.approx(0.0, abs=1e-12)


def test_traversal_hits_every_crossed_cell_once():
    grid = blank_grid(extent=4.0, res=1.0)
    model = SensorModel(l_hit=1.0, l_miss=-1.0, clamp=100.0)
    # oracle: crossed cells = 1 + x-line crossings + y-line crossings
    # (no corner coincidences for this segment)
    start = (-1.95, -1.85)
    end = (1.55, 1.25)
    dx, dy = end[0] - start[0], end[1] - start[1]
    n_x = len([m for m in range(-1, 2) if start[0] < m < end[0]])
    n_y = len([m for m in range(-1, 2) if start[1] < m < end[1]])
    expected = 1 + n_x + n_y
    scan = LidarScan(start_angle=math.atan2(dy, dx), angular_step=1.0,
                     ranges=np.array([math.hypot(dx, dy)]))
    out = integrate_scan(grid, (start[0], start[1], 0.0), scan, model)
    touched = np.count_nonzero(out.log_odds)
    # each touched cell got exactly one +-1 update
    assert np.all(np.abs(out.log_odds[out.log_odds != 0]) == 1.0)
    assert touched == expected == 7


def test_integrate_points_ground_filter():
    grid = blank_grid()
    pts_ground = [np.array([3.1, 0.05, 0.05])]
    out = integrate_points(grid, (0.0, 0.1, 0.0), pts_ground, MODEL)
    assert np.all(out.log_odds == 0.0)
    pts_rock = [np.array([3.1, 0.05, 0.5])]
    out = integrate_points(grid, (0.0, 0.1, 0.0), pts_rock, MODEL)
    hi, hj = out.cell_of(3.1, 0.05)
    assert out.log_odds[hj, hi] == pytest.approx(MODEL.l_hit)


def test_integrate_points_duplicates_saturate():
    grid = blank_grid()
    pts = [np.array([3.1, 0.05, 0.5])] * 30
    out = integrate_points(grid, (0.0, 0.1, 0.0), pts, MODEL)
    hi, hj = out.cell_of(3.1, 0.05)
    assert out.log_odds[hj, hi] == MODEL.clamp


def test_inflate_empty_grid_all_free_or_unknown():
    grid = blank_grid()
    cm = inflate(grid, robot_radius=0.5, decay=0.5)
    assert np.all(cm.cost == COST_UNKNOWN)
    grid.log_odds[:] = -1.0  # everything observed free
    cm = inflate(grid, robot_radius=0.5, decay=0.5)
    assert np.all(cm.cost == 0)


def test_inflate_discrete_disk_cell_count():
    # single occupied cell, robot radius 2 cells: |{cells with center
    # distance <= 2 res}| = 13 at inscribed-or-worse
    grid = blank_grid(extent=10.0, res=1.0)
    ci, cj = grid.cell_of(0.5, 0.5)
    grid.log_odds[cj, ci] = 4.0
    cm = inflate(grid, robot_radius=2.0, decay=0.5)
    n_bad = np.count_nonzero((cm.cost == COST_INSCRIBED)
                             | (cm.cost == COST_LETHAL))
    assert n_bad == 13
    assert cm.cost[cj, ci] == COST_LETHAL


def test_inflation_cost_monotone_with_distance():
    grid = blank_grid(extent=20.0, res=0.25)
    ci, cj = grid.cell_of(0.0, 0.0)
    grid.log_odds[cj, ci] = 4.0
    cm = inflate(grid, robot_radius=0.5, decay=1.0)
    costs = []
    for x in np.arange(0.6, 8.0, 0.25):
        i, j = cm.cell_of(x, 0.0)
        c = cm.cost[j, i]
        costs.append(255 if c == COST_UNKNOWN else c)
    real = [c for c in costs if c != 255]
    assert all(b <= a for a, b in zip(real, real[1:]))


def test_inflation_monotone_in_obstacles():
    rng = np.random.default_rng(40)
    grid = blank_grid(extent=12.0, res=0.25)
    for _ in range(10):
        i = rng.integers(5, 43)
        j = rng.integers(5, 43)
        grid.log_odds[j, i] = 4.0
    cm1 = inflate(grid, robot_radius=0.5, decay=0.5)
    grid2 = grid.copy()
    grid2.log_odds[24, 24] = 4.0
    cm2 = inflate(grid2, robot_radius=0.5, decay=0.5)
    c1 = np.where(cm1.cost == COST_UNKNOWN, 0, cm1.cost).astype(int)
    c2 = np.where(cm2.cost == COST_UNKNOWN, 0, cm2.cost).astype(int)
    assert np.all(c2 >= c1)


def test_corridor_stays_passable():
    # corridor wider than 2*(robot_radius + resolution) keeps a free path
    res = 0.25
    robot_radius = 0.5
    grid = blank_grid(extent=12.0, res=res)
    grid.log_odds[:] = -2.0
    half_width = robot_radius + res + 0.2
    for j in range(grid.shape[0]):
        for i in range(grid.shape[1]):
            x, y = grid.center_of(i, j)
            if abs(y) > half_width and abs(y) < half_width + 1.0:
                grid.log_odds[j, i] = 4.0
    cm = inflate(grid, robot_radius=robot_radius, decay=0.5)
    row = [cm.cost[cm.cell_of(x, 0.0)[1], cm.cell_of(x, 0.0)[0]]
           for x in np.arange(-5.5, 5.5, res)]
    assert all(c < COST_INSCRIBED for c in row)


def test_pgm_export_round_trip_header():
    grid = blank_grid(extent=4.0, res=0.5)
    grid.log_odds[2, 3] = 2.0
    text = grid.to_pgm()
    lines = text.splitlines()
    assert lines[0] == "P2"
    assert lines[1].startswith("# origin")
    assert lines[2].startswith("# resolution")
    w, h = (int(v) for v in lines[3].split())
    assert (h, w) == grid.shape
    assert len(lines) == 5 + h


def test_costmap_window_geometry():
    grid = blank_grid(extent=20.0, res=0.25)
    grid.log_odds[:] = -1.0
    cm = inflate(grid, 0.5, 0.5)
    win = cm.window((2.0, 3.0), 2.5)
    assert win.shape[0] <= cm.shape[0]
    wi, wj = win.cell_of(2.0, 3.0)
    assert win.in_bounds(wi, wj)
    gi, gj = cm.cell_of(2.0, 3.0)
    assert win.cost[wj, wi] == cm.cost[gj, gi]
