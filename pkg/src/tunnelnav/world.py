"""Procedural tunnel geometry with raycast and clearance queries.

The tunnel is modelled in plan view: two wall polylines around a piecewise
straight centerline, plus flat floor and ceiling planes.  Walls carry a
seeded, smooth roughness so that lidar returns look like a blasted rock
face without producing degenerate geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import InvalidSpecError, QueryError

# Target spacing between wall vertices; shrunk for short roughness wavelengths.
_MAX_VERTEX_SPACING = 0.25
_EPS = 1e-12


def normalize_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = angle - 2.0 * math.pi * math.ceil((angle - math.pi) / (2.0 * math.pi))
    # ceil() can land one period off for values within an ulp of the boundary
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    elif wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class TunnelSpec:
    """Parameters of a procedurally generated tunnel.

    ``segments`` is an ordered sequence of ``(length, heading_change)``
    pairs; the heading change (radians, positive = left) is applied at the
    start of its segment.
    """

    segments: tuple[tuple[float, float], ...] = ((60.0, 0.0),)
    width: float = 6.0
    height: float = 4.0
    roughness_amplitude: float = 0.05
    roughness_wavelength: float = 2.0

    def __post_init__(self) -> None:
        segs = tuple((float(length), float(turn)) for length, turn in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise InvalidSpecError("segments: at least one segment is required")
        for i, (length, turn) in enumerate(segs):
            if not (math.isfinite(length) and length > 0.0):
                raise InvalidSpecError(f"segments[{i}]: length must be > 0, got {length}")
            if not (math.isfinite(turn) and abs(turn) < math.pi / 2):
                raise InvalidSpecError(
                    f"segments[{i}]: heading_change must lie in (-pi/2, pi/2), got {turn}"
                )
        if not (math.isfinite(self.width) and self.width > 0.0):
            raise InvalidSpecError(f"width must be > 0, got {self.width}")
        if not (math.isfinite(self.height) and self.height > 0.0):
            raise InvalidSpecError(f"height must be > 0, got {self.height}")
        if not (self.roughness_amplitude >= 0.0):
            raise InvalidSpecError(
                f"roughness_amplitude must be >= 0, got {self.roughness_amplitude}"
            )
        if not (self.roughness_amplitude < self.width / 4.0):
            raise InvalidSpecError(
                f"roughness_amplitude must be < width/4 = {self.width / 4.0}, "
                f"got {self.roughness_amplitude}"
            )
        if not (math.isfinite(self.roughness_wavelength) and self.roughness_wavelength > 0.0):
            raise InvalidSpecError(
                f"roughness_wavelength must be > 0, got {self.roughness_wavelength}"
            )

    @property
    def total_length(self) -> float:
        return sum(length for length, _ in self.segments)


@dataclass(frozen=True)
class Pose:
    """Planar pose plus altitude; yaw is kept in (-pi, pi]."""

    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class WorldGeometry:
    """Immutable tunnel geometry.

    Wall arrays have shape ``(K, 2)`` with matching vertex counts; vertex
    ``i`` of the left wall is the partner of vertex ``i`` of the right wall.
    """

    left_wall: np.ndarray
    right_wall: np.ndarray
    centerline: np.ndarray
    floor_z: float = 0.0
    ceiling_z: float = 4.0
    corner_stations: tuple[float, ...] = ()
    _seg_a: np.ndarray = field(init=False, repr=False)
    _seg_b: np.ndarray = field(init=False, repr=False)
    _polygon: np.ndarray = field(init=False, repr=False)
    _station: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("left_wall", "right_wall", "centerline"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.left_wall.shape != self.right_wall.shape:
            raise InvalidSpecError("walls must have equal vertex counts")
        seg_a = np.concatenate([self.left_wall[:-1], self.right_wall[:-1]])
        seg_b = np.concatenate([self.left_wall[1:], self.right_wall[1:]])
        polygon = np.concatenate([self.left_wall, self.right_wall[::-1]])
        steps = np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)
        station = np.concatenate([[0.0], np.cumsum(steps)])
        for name, arr in (("_seg_a", seg_a), ("_seg_b", seg_b), ("_polygon", polygon), ("_station", station)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def wall_segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of every wall segment, shape ``(M, 2)`` each."""
        return self._seg_a, self._seg_b

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """``(xmin, ymin, xmax, ymax)`` of both walls."""
        pts = np.concatenate([self.left_wall, self.right_wall])
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @property
    def max_segment_length(self) -> float:
        return float(np.max(np.hypot(*(self._seg_b - self._seg_a).T)))

    @property
    def length(self) -> float:
        return float(self._station[-1])

    def contains(self, point: Sequence[float]) -> bool:
        """True if ``point`` lies strictly inside the closed tunnel outline."""
        return bool(_inside_polygon(self._polygon, float(point[0]), float(point[1])))

    def station(self, point: Sequence[float]) -> float:
        """Arc length along the centerline of the closest centerline point."""
        p = np.asarray(point, dtype=float)[:2]
        a = self.centerline[:-1]
        b = self.centerline[1:]
        d, t = _point_segment_distances(p, a, b)
        i = int(np.argmin(d))
        seg_len = self._station[i + 1] - self._station[i]
        return float(self._station[i] + t[i] * seg_len)

    def heading_at(self, station: float) -> float:
        """Centerline heading (radians) at the given arc length."""
        i = int(np.searchsorted(self._station, station, side="right") - 1)
        i = min(max(i, 0), len(self.centerline) - 2)
        d = self.centerline[i + 1] - self.centerline[i]
        return math.atan2(d[1], d[0])

    def fingerprint(self) -> bytes:
        """Raw bytes of all geometry arrays, for bit-exact comparisons."""
        return b"".join(
            arr.tobytes() for arr in (self.left_wall, self.right_wall, self.centerline)
        ) + np.array([self.floor_z, self.ceiling_z]).tobytes()


def _roughness(s: np.ndarray, amplitude: float, wavelength: float, phases: np.ndarray) -> np.ndarray:
    return amplitude * (
        0.5 * np.sin(2.0 * np.pi * s / wavelength + phases[0])
        + 0.5 * np.sin(2.0 * np.pi * s / (3.0 * wavelength) + phases[1])
    )


def build_tunnel(spec: TunnelSpec, seed: int = 0) -> WorldGeometry:
    """Generate the wall polylines of ``spec``.

    The result depends only on ``(spec, seed)``.  Corners are mitered; wall
    samples that would fold back behind an inner miter point are dropped
    from both walls so partner vertices stay paired.
    """
    if not isinstance(spec, TunnelSpec):
        raise InvalidSpecError("build_tunnel expects a TunnelSpec")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A11]))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(2, 2))

    half = spec.width / 2.0
    amp = spec.roughness_amplitude
    spacing = min(_MAX_VERTEX_SPACING, spec.roughness_wavelength / 8.0)

    headings = []
    heading = 0.0
    for _, turn in spec.segments:
        heading += turn
        headings.append(heading)

    centerline = [np.zeros(2)]
    starts = [0.0]
    for (length, _), h in zip(spec.segments, headings):
        centerline.append(centerline[-1] + length * np.array([math.cos(h), math.sin(h)]))
        starts.append(starts[-1] + length)
    centerline_arr = np.array(centerline)

    stations: list[float] = []
    centers: list[np.ndarray] = []
    normals: list[np.ndarray] = []
    scales: list[float] = []
    n_seg = len(spec.segments)
    for j, ((length, _), h) in enumerate(zip(spec.segments, headings)):
        d = np.array([math.cos(h), math.sin(h)])
        n = np.array([-d[1], d[0]])
        cut_in = 0.0
        if j > 0:
            delta = headings[j] - headings[j - 1]
            cut_in = (half + amp) * abs(math.tan(delta / 2.0))
        cut_out = 0.0
        if j + 1 < n_seg:
            delta = headings[j + 1] - headings[j]
            cut_out = (half + amp) * abs(math.tan(delta / 2.0))
        count = max(1, int(math.ceil(length / spacing)))
        for k in range(count + (1 if j == n_seg - 1 else 0)):
            u = length * k / count
            if k == 0 and j > 0:
                prev = headings[j - 1]
                n_prev = np.array([-math.sin(prev), math.cos(prev)])
                miter = n_prev + n
                miter /= np.linalg.norm(miter)
                delta = headings[j] - prev
                stations.append(starts[j])
                centers.append(centerline_arr[j])
                normals.append(miter)
                scales.append(1.0 / math.cos(delta / 2.0))
                continue
            if 0 < u < cut_in + 1e-9 or (length - u) < cut_out + 1e-9 and k > 0 and j + 1 < n_seg:
                continue
            stations.append(starts[j] + u)
            centers.append(centerline_arr[j] + u * d)
            normals.append(n)
            scales.append(1.0)

    s = np.array(stations)
    c = np.array(centers)
    nrm = np.array(normals)
    scale = np.array(scales)[:, None]
    left_off = half + _roughness(s, amp, spec.roughness_wavelength, phases[0])
    right_off = half + _roughness(s, amp, spec.roughness_wavelength, phases[1])
    left = c + nrm * (left_off[:, None] * scale)
    right = c - nrm * (right_off[:, None] * scale)
    corners = tuple(float(x) for x in starts[1:-1])
    return WorldGeometry(
        left_wall=left,
        right_wall=right,
        centerline=centerline_arr,
        floor_z=0.0,
        ceiling_z=spec.height,
        corner_stations=corners,
    )


@njit(cache=True)
def _inside_polygon(poly: np.ndarray, x: float, y: float) -> bool:
    inside = False
    n = poly.shape[0]
    j = n - 1
    for i in range(n):
        xi, yi = poly[i, 0], poly[i, 1]
        xj, yj = poly[j, 0], poly[j, 1]
        if (yi > y) != (yj > y):
            if x < (xj - xi) * (y - yi) / (yj - yi) + xi:
                inside = not inside
        j = i
    return inside


@njit(cache=True)
def _min_distance(px: float, py: float, seg_a: np.ndarray, seg_b: np.ndarray) -> float:
    best = np.inf
    for s in range(seg_a.shape[0]):
        ax, ay = seg_a[s, 0], seg_a[s, 1]
        ex, ey = seg_b[s, 0] - ax, seg_b[s, 1] - ay
        den = ex * ex + ey * ey
        u = 0.0
        if den > 0.0:
            u = min(max(((px - ax) * ex + (py - ay) * ey) / den, 0.0), 1.0)
        dx = ax + u * ex - px
        dy = ay + u * ey - py
        d = dx * dx + dy * dy
        if d < best:
            best = d
    return math.sqrt(best)


@njit(cache=True)
def _raycast_kernel(ox, oy, dirs, seg_a, seg_b, max_range, eps):
    n = dirs.shape[0]
    out = np.full(n, np.nan)
    m = seg_a.shape[0]
    for b in range(n):
        dx, dy = dirs[b, 0], dirs[b, 1]
        best = np.inf
        for s in range(m):
            ax, ay = seg_a[s, 0] - ox, seg_a[s, 1] - oy
            ex, ey = seg_b[s, 0] - seg_a[s, 0], seg_b[s, 1] - seg_a[s, 1]
            den = dx * ey - dy * ex
            if abs(den) <= eps:
                continue
            t = (ax * ey - ay * ex) / den
            if t <= eps or t > max_range or t >= best:
                continue
            u = (ax * dy - ay * dx) / den
            if 0.0 <= u <= 1.0:
                best = t
        if best < np.inf:
            out[b] = best
    return out


def _point_segment_distances(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0.0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + ab * t[:, None]
    return np.hypot(closest[:, 0] - p[0], closest[:, 1] - p[1]), t


def wall_distance(geometry: WorldGeometry, point: Sequence[float]) -> float:
    """Unsigned distance from ``point`` to the nearest wall polyline."""
    a, b = geometry.wall_segments
    return float(_min_distance(float(point[0]), float(point[1]), a, b))


def clearance(geometry: WorldGeometry, point: Sequence[float]) -> float:
    """Signed distance to the nearest wall; negative outside free space."""
    d = wall_distance(geometry, point)
    if d == 0.0:
        return 0.0
    return d if geometry.contains(point) else -d


def raycast_many(
    geometry: WorldGeometry,
    origin: Sequence[float],
    directions: np.ndarray,
    max_range: float,
) -> np.ndarray:
    """Ranges along each row of ``directions``; NaN where nothing is hit.

    The origin is not checked against free space here; see :func:`raycast`.
    """
    ox, oy = float(origin[0]), float(origin[1])
    dirs = np.ascontiguousarray(np.atleast_2d(np.asarray(directions, dtype=float)))
    a, b = geometry.wall_segments
    # cheap prefilter: segment endpoints within reach of the ray origin
    reach = max_range + geometry.max_segment_length
    near = (np.hypot(a[:, 0] - ox, a[:, 1] - oy) <= reach)
    return _raycast_kernel(ox, oy, dirs, np.ascontiguousarray(a[near]), np.ascontiguousarray(b[near]),
                           float(max_range), _EPS)


def raycast(
    geometry: WorldGeometry,
    origin: Sequence[float],
    direction: Sequence[float],
    max_range: float,
) -> Optional[float]:
    """Distance to the first wall along ``direction``, or None beyond ``max_range``."""
    if not geometry.contains(origin) or wall_distance(geometry, origin) == 0.0:
        raise QueryError(f"raycast origin {tuple(origin)} is outside free space")
    d = np.asarray(direction, dtype=float)
    norm = float(np.hypot(d[0], d[1]))
    if not math.isfinite(norm) or norm == 0.0:
        raise QueryError("raycast direction must be a non-zero finite vector")
    r = raycast_many(geometry, origin, (d / norm)[None, :], max_range)[0]
    return None if math.isnan(r) else float(r)


def write_polylines(geometry: WorldGeometry, path: str | Path) -> None:
    """Dump left wall, right wall and centerline as blank-line separated ``x y`` blocks."""
    blocks = []
    for poly in (geometry.left_wall, geometry.right_wall, geometry.centerline):
        blocks.append("\n".join(f"{x:.9g} {y:.9g}" for x, y in poly))
    Path(path).write_text("\n\n".join(blocks) + "\n")
