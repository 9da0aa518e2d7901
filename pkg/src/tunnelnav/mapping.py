"""Log-odds occupancy grid built from lidar scans at known poses, with PGM export."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import BoundsError, InvalidSpecError
from .sensors import LidarScan
from .world import Pose, WorldGeometry

PIXEL_OCCUPIED = 0
PIXEL_FREE = 254
PIXEL_UNKNOWN = 205


@dataclass(eq=False)
class OccupancyGrid:
    """``cells[row, col]`` holds log-odds; row 0 is the lowest world y."""

    origin: tuple[float, float]
    width: int
    height: int
    resolution: float = 0.05
    l_occ: float = 0.85
    l_free: float = -0.4
    clamp: float = 4.0
    cells: np.ndarray = field(default=None, repr=False)
    endpoint_hits: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.resolution > 0.0:
            raise InvalidSpecError(f"resolution must be > 0, got {self.resolution}")
        if self.width < 1 or self.height < 1:
            raise InvalidSpecError(f"grid must have at least one cell, got {self.width}x{self.height}")
        if not self.clamp > 0.0:
            raise InvalidSpecError(f"clamp must be > 0, got {self.clamp}")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        if self.cells is None:
            self.cells = np.zeros((self.height, self.width))
        if self.endpoint_hits is None:
            self.endpoint_hits = np.zeros((self.height, self.width), dtype=np.int64)

    @classmethod
    def from_bounds(cls, bounds: tuple[float, float, float, float], resolution: float = 0.05,
                    margin: float = 2.0, **kwargs) -> "OccupancyGrid":
        xmin, ymin, xmax, ymax = bounds
        width, height = grid_shape(bounds, resolution, margin)
        return cls((xmin - margin, ymin - margin), width, height, resolution, **kwargs)

    @classmethod
    def for_geometry(cls, geometry: WorldGeometry, resolution: float = 0.05,
                     margin: float = 2.0, **kwargs) -> "OccupancyGrid":
        return cls.from_bounds(geometry.bounds, resolution, margin, **kwargs)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.origin, self.width, self.height, self.resolution, self.l_occ,
                             self.l_free, self.clamp, self.cells.copy(), self.endpoint_hits.copy())

    def probabilities(self) -> np.ndarray:
        return 1.0 - 1.0 / (1.0 + np.exp(self.cells))

    def occupied(self) -> np.ndarray:
        return self.probabilities() > 0.65


def grid_shape(bounds: tuple[float, float, float, float], resolution: float, margin: float) -> tuple[int, int]:
    """Cell counts ``(width, height)`` covering ``bounds`` plus ``margin`` on every side."""
    xmin, ymin, xmax, ymax = bounds
    w = int(math.ceil((xmax - xmin + 2.0 * margin) / resolution - 1e-9))
    h = int(math.ceil((ymax - ymin + 2.0 * margin) / resolution - 1e-9))
    return max(w, 1), max(h, 1)


def world_to_cell(point, grid: OccupancyGrid) -> tuple[int, int]:
    """``(col, row)`` of the cell containing ``point``."""
    col = math.floor((point[0] - grid.origin[0]) / grid.resolution)
    row = math.floor((point[1] - grid.origin[1]) / grid.resolution)
    if not (0 <= col < grid.width and 0 <= row < grid.height):
        raise BoundsError(f"point {tuple(point)} lies outside the grid")
    return col, row


@njit(cache=True)
def _trace_beams(free_n, occ_n, hits, c0, r0, end_c, end_r):
    h, w = free_n.shape
    for b in range(end_c.shape[0]):
        c1 = end_c[b]
        r1 = end_r[b]
        dc = abs(c1 - c0)
        dr = -abs(r1 - r0)
        sc = 1 if c0 < c1 else -1
        sr = 1 if r0 < r1 else -1
        err = dc + dr
        c = c0
        r = r0
        while not (c == c1 and r == r1):
            e2 = 2 * err
            if e2 >= dr:
                err += dr
                c += sc
            if e2 <= dc:
                err += dc
                r += sr
            if c == c1 and r == r1:
                break
            if 0 <= c < w and 0 <= r < h:
                free_n[r, c] += 1
        if 0 <= c1 < w and 0 <= r1 < h:
            occ_n[r1, c1] += 1
            hits[r1, c1] += 1


def beam_cells(grid: OccupancyGrid, start: tuple[int, int], end: tuple[int, int]) -> tuple[list, tuple[int, int]]:
    """Cells a single beam marks free, and its endpoint cell (for inspection/tests)."""
    free_n = np.zeros((grid.height, grid.width), dtype=np.int64)
    occ_n = np.zeros_like(free_n)
    hits = np.zeros_like(free_n)
    _trace_beams(free_n, occ_n, hits, start[0], start[1],
                 np.array([end[0]], dtype=np.int64), np.array([end[1]], dtype=np.int64))
    rows, cols = np.nonzero(free_n)
    return sorted(zip(cols.tolist(), rows.tolist())), end


def scan_counts(grid: OccupancyGrid, pose: Pose, scan: LidarScan) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell free and occupied increment counts produced by one scan."""
    c0, r0 = world_to_cell((pose.x, pose.y), grid)
    free_n = np.zeros((grid.height, grid.width), dtype=np.int64)
    occ_n = np.zeros_like(free_n)
    hits = np.zeros_like(free_n)
    _accumulate(grid, pose, scan, c0, r0, free_n, occ_n, hits)
    return free_n, occ_n


def _accumulate(grid, pose, scan, c0, r0, free_n, occ_n, hits) -> None:
    valid = scan.valid & np.isfinite(scan.ranges)
    if not np.any(valid):
        return
    a = scan.angles[valid] + pose.yaw
    rng = scan.ranges[valid]
    ex = pose.x + rng * np.cos(a)
    ey = pose.y + rng * np.sin(a)
    end_c = np.floor((ex - grid.origin[0]) / grid.resolution).astype(np.int64)
    end_r = np.floor((ey - grid.origin[1]) / grid.resolution).astype(np.int64)
    _trace_beams(free_n, occ_n, hits, c0, r0, end_c, end_r)


def integrate_scan(grid: OccupancyGrid, pose: Pose, scan: LidarScan) -> OccupancyGrid:
    """Apply one scan in place and return the grid.

    Free increments go to every cell strictly between the sensor cell and
    the endpoint cell; the endpoint cell gets the occupied increment.  The
    clamp is applied once per scan, so beam order cannot change the result.
    """
    c0, r0 = world_to_cell((pose.x, pose.y), grid)
    free_n = np.zeros((grid.height, grid.width), dtype=np.int64)
    occ_n = np.zeros_like(free_n)
    _accumulate(grid, pose, scan, c0, r0, free_n, occ_n, grid.endpoint_hits)
    touched = (free_n > 0) | (occ_n > 0)
    if np.any(touched):
        delta = free_n[touched] * grid.l_free + occ_n[touched] * grid.l_occ
        grid.cells[touched] = np.clip(grid.cells[touched] + delta, -grid.clamp, grid.clamp)
    return grid


def pgm_pixels(grid: OccupancyGrid) -> np.ndarray:
    """8-bit image with row 0 at the top (maximum world y)."""
    p = grid.probabilities()
    img = np.full(p.shape, PIXEL_UNKNOWN, dtype=np.uint8)
    img[p > 0.65] = PIXEL_OCCUPIED
    img[p < 0.35] = PIXEL_FREE
    return img[::-1]


def export_pgm(grid: OccupancyGrid, path: str | Path) -> Path:
    """Write a binary P5 image plus a ``.meta`` companion next to it."""
    path = Path(path)
    img = pgm_pixels(grid)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img).tobytes())
    write_meta(grid, path.with_suffix(".meta"))
    return path


def write_meta(grid: OccupancyGrid, path: str | Path) -> None:
    ox, oy = grid.origin
    Path(path).write_text(f"{ox:.9g} {oy:.9g} {grid.resolution:.9g} {grid.width} {grid.height}\n")


def read_meta(path: str | Path) -> tuple[float, float, float, int, int]:
    parts = Path(path).read_text().split()
    if len(parts) != 5:
        raise ValueError(f"{path}: expected 'origin_x origin_y resolution width height'")
    return float(parts[0]), float(parts[1]), float(parts[2]), int(parts[3]), int(parts[4])


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


# ---------------------------------------------------------------- ground-truth statistics

_DIST_CAP = 1.5


@njit(cache=True)
def _capped_wall_distance(ox, oy, res, w, h, seg_a, seg_b, tile, tiles_x, tile_start, tile_segs, cap):
    out = np.full((h, w), cap)
    for r in range(h):
        py = oy + (r + 0.5) * res
        ty = int((py - oy) // tile)
        for c in range(w):
            px = ox + (c + 0.5) * res
            tx = int((px - ox) // tile)
            t = ty * tiles_x + tx
            best = cap
            for q in range(tile_start[t], tile_start[t + 1]):
                s = tile_segs[q]
                ax, ay = seg_a[s, 0], seg_a[s, 1]
                ex, ey = seg_b[s, 0] - ax, seg_b[s, 1] - ay
                den = ex * ex + ey * ey
                u = 0.0
                if den > 0.0:
                    u = ((px - ax) * ex + (py - ay) * ey) / den
                    u = min(max(u, 0.0), 1.0)
                dx = ax + u * ex - px
                dy = ay + u * ey - py
                d = math.sqrt(dx * dx + dy * dy)
                if d < best:
                    best = d
            out[r, c] = best
    return out


def _wall_distance_field(grid: OccupancyGrid, geometry: WorldGeometry, cap: float = _DIST_CAP) -> np.ndarray:
    seg_a, seg_b = geometry.wall_segments
    ox, oy = grid.origin
    tile = 1.0
    tiles_x = int(math.ceil(grid.width * grid.resolution / tile)) + 1
    tiles_y = int(math.ceil(grid.height * grid.resolution / tile)) + 1
    lo = np.minimum(seg_a, seg_b) - cap
    hi = np.maximum(seg_a, seg_b) + cap
    buckets: list[list[int]] = [[] for _ in range(tiles_x * tiles_y)]
    for s in range(len(seg_a)):
        x0 = max(int((lo[s, 0] - ox) // tile), 0)
        x1 = min(int((hi[s, 0] - ox) // tile), tiles_x - 1)
        y0 = max(int((lo[s, 1] - oy) // tile), 0)
        y1 = min(int((hi[s, 1] - oy) // tile), tiles_y - 1)
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                buckets[ty * tiles_x + tx].append(s)
    starts = np.zeros(len(buckets) + 1, dtype=np.int64)
    starts[1:] = np.cumsum([len(b) for b in buckets])
    flat = np.array([s for b in buckets for s in b], dtype=np.int64)
    return _capped_wall_distance(ox, oy, grid.resolution, grid.width, grid.height,
                                 np.ascontiguousarray(seg_a), np.ascontiguousarray(seg_b),
                                 tile, tiles_x, starts, flat, cap)


def _inside_mask(grid: OccupancyGrid, geometry: WorldGeometry) -> np.ndarray:
    poly = np.concatenate([geometry.left_wall, geometry.right_wall[::-1]])
    xi, yi = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    xs = grid.origin[0] + (np.arange(grid.width) + 0.5) * grid.resolution
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    for r in range(grid.height):
        y = grid.origin[1] + (r + 0.5) * grid.resolution
        crosses = (yi > y) != (yj > y)
        if not np.any(crosses):
            continue
        x_at = np.sort((xj[crosses] - xi[crosses]) * (y - yi[crosses]) / (yj[crosses] - yi[crosses]) + xi[crosses])
        count = np.searchsorted(x_at, xs, side="right")
        mask[r] = count % 2 == 1
    return mask


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    h, w = mask.shape
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if dr == 0 and dc == 0:
                continue
            src = mask[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)]
            out[max(0, dr):h - max(0, -dr), max(0, dc):w - max(0, -dc)] |= src
    return out


def map_stats(grid: OccupancyGrid, geometry: WorldGeometry, wall_band: float = 0.1,
              corridor_clearance: float = 1.0) -> tuple[float, float]:
    """``(wall_hit_rate, corridor_false_occupancy)`` against ground-truth walls.

    A true-wall cell (centre within ``wall_band`` of a wall) counts as
    observed when a beam endpoint fell within ``wall_band`` of it, and as
    hit when an occupied cell lies within the same neighbourhood.  Corridor
    cells are inside the tunnel with centre clearance above
    ``corridor_clearance``.
    """
    dist = _wall_distance_field(grid, geometry)
    occupied = grid.occupied()
    radius = max(1, int(round(wall_band / grid.resolution)))
    wall = dist <= wall_band
    observed = wall & _dilate(grid.endpoint_hits > 0, radius)
    hit = observed & _dilate(occupied, radius)
    n_obs = int(observed.sum())
    wall_hit_rate = hit.sum() / n_obs if n_obs else 0.0
    corridor = _inside_mask(grid, geometry) & (dist > corridor_clearance)
    n_cor = int(corridor.sum())
    false_occ = (corridor & occupied).sum() / n_cor if n_cor else 0.0
    return float(wall_hit_rate), float(false_occ)
