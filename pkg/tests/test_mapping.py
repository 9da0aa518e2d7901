import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tunnelnav.errors import BoundsError
from tunnelnav.mapping import (
    OccupancyGrid, beam_cells, export_pgm, integrate_scan, map_stats, pgm_pixels, read_meta, read_pgm,
    scan_counts, world_to_cell,
)
from tunnelnav.sensors import LidarScan, NoiseParams, sample_lidar
from tunnelnav.world import Pose


def blank(width=100, height=100, origin=(0.0, 0.0)):
    return OccupancyGrid(origin, width, height, 0.05)


def one_beam(r, n=360, index=0):
    ranges = np.full(n, math.nan)
    ranges[index] = r
    return LidarScan.from_ranges(ranges)


def test_world_to_cell_examples():
    g = blank()
    assert world_to_cell((0.0, 0.0), g) == (0, 0)
    assert world_to_cell((1.0, 2.0), g) == (20, 40)
    with pytest.raises(BoundsError):
        world_to_cell((-0.01, 0.5), g)
    with pytest.raises(BoundsError):
        world_to_cell((5.0, 0.5), g)


def test_single_beam_cells():
    g = blank()
    integrate_scan(g, Pose(0.0, 0.0), one_beam(1.0))
    row = g.cells[0]
    assert row[0] == 0.0
    assert np.all(row[1:20] == -0.4)
    assert row[20] == 0.85
    assert np.count_nonzero(g.cells) == 20


def test_invalid_scan_leaves_grid_unchanged():
    g = blank()
    integrate_scan(g, Pose(1.0, 1.0), LidarScan.from_ranges(np.full(360, 9.0)))
    assert not np.any(g.cells) and not np.any(g.endpoint_hits)


def test_repeated_hits_clamp():
    g = blank()
    for _ in range(10):
        integrate_scan(g, Pose(0.0, 0.0), one_beam(1.0))
    assert g.cells[0, 20] == min(10 * 0.85, 4.0) == 4.0
    assert g.cells[0, 5] == pytest.approx(-4.0)


def test_pgm_pixel_rules():
    g = blank(4, 3)
    assert np.all(pgm_pixels(g) == 205)
    g.cells[0, 0] = 4.0
    g.cells[0, 1] = -0.8
    assert 1.0 / (1.0 + math.exp(-4.0)) == pytest.approx(0.982, abs=1e-3)
    assert 1.0 / (1.0 + math.exp(0.8)) == pytest.approx(0.310, abs=1e-3)
    img = pgm_pixels(g)
    # row 0 of the image is the top (largest world y)
    assert img[-1, 0] == 0 and img[-1, 1] == 254 and img[0, 0] == 205


def test_pgm_roundtrip(tmp_path):
    g = blank(37, 21, origin=(-1.5, 2.25))
    g.cells[3, 4] = 4.0
    path = export_pgm(g, tmp_path / "map.pgm")
    img = read_pgm(path)
    assert img.shape == (21, 37)
    assert np.array_equal(img, pgm_pixels(g))
    assert read_meta(tmp_path / "map.meta") == (-1.5, 2.25, 0.05, 37, 21)
    assert path.read_bytes().startswith(b"P5\n37 21\n255\n")


def test_grid_for_geometry_covers_bounds(straight_smooth):
    g = OccupancyGrid.for_geometry(straight_smooth, 0.05, 2.0)
    xmin, ymin, xmax, ymax = straight_smooth.bounds
    assert g.origin == (xmin - 2.0, ymin - 2.0)
    assert (g.width, g.height) == (round((xmax - xmin + 4.0) / 0.05), round((ymax - ymin + 4.0) / 0.05))


def test_stats_empty_grid(straight_smooth):
    assert map_stats(OccupancyGrid.for_geometry(straight_smooth), straight_smooth) == (0.0, 0.0)


def test_stats_all_occupied(straight_smooth):
    g = OccupancyGrid.for_geometry(straight_smooth)
    g.cells[:] = 4.0
    assert map_stats(g, straight_smooth)[1] == 1.0


def test_noiseless_mapping_is_near_perfect(straight_rough):
    g = OccupancyGrid.for_geometry(straight_rough)
    rng = np.random.default_rng(0)
    for x in np.arange(1.0, 59.5, 0.5):
        pose = Pose(float(x), 0.0, 1.0, 0.0)
        integrate_scan(g, pose, sample_lidar(straight_rough, pose, NoiseParams.noiseless(), rng))
    hit_rate, false_occ = map_stats(g, straight_rough)
    assert hit_rate >= 0.99 and false_occ == 0.0


def oracle_line(c0, r0, c1, r1):
    """Classic octant Bresenham, stepping along the major axis."""
    dc, dr = c1 - c0, r1 - r0
    steep = abs(dr) > abs(dc)
    if steep:
        c0, r0, c1, r1, dc, dr = r0, c0, r1, c1, dr, dc
    step_c = 1 if dc >= 0 else -1
    step_r = 1 if dr >= 0 else -1
    cells = []
    err = 0
    r = r0
    for i in range(abs(dc) + 1):
        c = c0 + i * step_c
        cells.append((r, c) if steep else (c, r))
        err += 2 * abs(dr)
        if err > abs(dc):
            r += step_r
            err -= 2 * abs(dc)
    return cells


@pytest.mark.parametrize("end", [(20, 0), (0, 20), (20, 20), (-13, 7), (9, -30), (5, 5)])
def test_traversal_matches_integer_oracle_on_simple_lines(end):
    g = blank(200, 200)
    start = (50, 50)
    stop = (50 + end[0], 50 + end[1])
    free, _ = beam_cells(g, start, stop)
    expected = oracle_line(*start, *stop)[1:-1]
    if abs(end[0]) == abs(end[1]) or 0 in end:
        assert free == sorted(expected)
    assert len(free) == max(abs(end[0]), abs(end[1])) - 1


@settings(max_examples=200, deadline=None)
@given(c1=st.integers(0, 99), r1=st.integers(0, 99))
def test_traversal_is_eight_connected(c1, r1):
    g = blank()
    start = (50, 50)
    free, end = beam_cells(g, start, (c1, r1))
    if (c1, r1) == start:
        assert free == []
        return
    assert start not in free and end not in free
    assert len(free) == max(abs(c1 - 50), abs(r1 - 50)) - 1


scans = st.lists(st.one_of(st.floats(0.0, 8.0), st.just(math.nan)), min_size=72, max_size=72)
poses = st.tuples(st.floats(1.0, 4.0), st.floats(1.0, 4.0), st.floats(-math.pi, math.pi))


@settings(max_examples=40, deadline=None)
@given(ranges=st.lists(scans, min_size=1, max_size=6), pose=poses)
def test_cells_stay_clamped(ranges, pose):
    g = blank()
    for r in ranges:
        integrate_scan(g, Pose(pose[0], pose[1], 0.0, pose[2]), LidarScan.from_ranges(r))
        assert np.all(np.abs(g.cells) <= 4.0)


@settings(max_examples=40, deadline=None)
@given(ranges=scans, pose=poses)
def test_same_scan_touches_same_cells(ranges, pose):
    p = Pose(pose[0], pose[1], 0.0, pose[2])
    scan = LidarScan.from_ranges(ranges)
    g = blank()
    integrate_scan(g, p, scan)
    first = g.cells != 0.0
    h = g.copy()
    integrate_scan(h, p, scan)
    changed = (h.cells != g.cells) | (h.cells != 0.0)
    assert np.array_equal(first | changed, first | (h.cells != 0.0))
    f1, o1 = scan_counts(blank(), p, scan)
    f2, o2 = scan_counts(blank(), p, scan)
    assert np.array_equal((f1 > 0) | (o1 > 0), (f2 > 0) | (o2 > 0))


@settings(max_examples=40, deadline=None)
@given(ranges=scans, pose=poses, seed=st.integers(0, 1000))
def test_increments_independent_of_beam_order(ranges, pose, seed):
    p = Pose(pose[0], pose[1], 0.0, pose[2])
    scan = LidarScan.from_ranges(ranges)
    perm = np.random.default_rng(seed).permutation(scan.beam_count)
    shuffled = LidarScan(0.0, scan.angles[perm], scan.ranges[perm], scan.valid[perm])
    a, b = blank(), blank()
    integrate_scan(a, p, scan)
    integrate_scan(b, p, shuffled)
    assert np.array_equal(a.cells, b.cells)
    assert all(np.array_equal(x, y) for x, y in zip(scan_counts(blank(), p, scan), scan_counts(blank(), p, shuffled)))


@settings(max_examples=100, deadline=None)
@given(r=st.floats(0.15, 7.0), index=st.integers(0, 359), x=st.floats(8.0, 12.0), y=st.floats(8.0, 12.0))
def test_endpoint_never_freed_by_its_own_beam(r, index, x, y):
    g = blank(400, 400)
    pose = Pose(x, y)
    free_n, occ_n = scan_counts(g, pose, one_beam(r, index=index))
    assert occ_n.sum() == 1
    assert free_n[occ_n > 0].sum() == 0
