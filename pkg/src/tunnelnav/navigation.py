"""Lidar-only reactive navigation: potential-field repulsion and open-space heading.

Everything here is a pure function of one scan.  Beam ``i`` of an
``N``-beam scan points at body angle ``2*pi*i/N``; internally angles are
folded to a signed index so that mirrored scans give exactly mirrored
outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidSpecError
from .sensors import LIDAR_MAX_VALID, LidarScan

YAW_RATE_LIMIT = 0.5


@dataclass(frozen=True)
class NavParams:
    cruise: float = 0.1
    z_ref: float = 1.0
    influence_distance: float = 2.0
    k_rep: float = 0.15
    k_heading: float = 0.8
    front_half_width: float = math.pi / 2
    window: int = 9
    v_cap: float = 0.5
    yaw_rate_max: float = YAW_RATE_LIMIT
    # an invalid run counts as "beyond truncation" when both flanks read at least this far
    far_flank: float = 6.0
    # smoothed ranges within this margin of the maximum are treated as tied
    tie_tolerance: float = 0.02

    def __post_init__(self) -> None:
        if not self.influence_distance > 0.15:
            raise InvalidSpecError(f"influence_distance must be > 0.15, got {self.influence_distance}")
        for name in ("k_rep", "k_heading", "v_cap", "front_half_width", "yaw_rate_max"):
            if not getattr(self, name) > 0.0:
                raise InvalidSpecError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.cruise >= 0.0:
            raise InvalidSpecError(f"cruise must be >= 0, got {self.cruise}")
        if not self.z_ref > 0.0:
            raise InvalidSpecError(f"z_ref must be > 0, got {self.z_ref}")
        if isinstance(self.window, bool) or int(self.window) != self.window or self.window < 1 or self.window % 2 == 0:
            raise InvalidSpecError(f"window must be an odd integer >= 1, got {self.window}")
        object.__setattr__(self, "window", int(self.window))
        if self.yaw_rate_max > YAW_RATE_LIMIT:
            raise InvalidSpecError(f"yaw_rate_max must be <= {YAW_RATE_LIMIT}, got {self.yaw_rate_max}")
        if not 0.0 < self.far_flank <= LIDAR_MAX_VALID:
            raise InvalidSpecError(f"far_flank must be in (0, {LIDAR_MAX_VALID}], got {self.far_flank}")
        if not self.tie_tolerance >= 0.0:
            raise InvalidSpecError(f"tie_tolerance must be >= 0, got {self.tie_tolerance}")


class Repulsion(NamedTuple):
    vx: float
    vy: float
    degraded: bool


class Heading(NamedTuple):
    error: float
    degraded: bool


@dataclass(frozen=True)
class NavReference:
    vx: float
    vy: float
    z_ref: float
    yaw_rate: float
    degraded: bool = False


def _signed_angles(n: int) -> np.ndarray:
    idx = np.arange(n)
    signed = np.where(idx <= n // 2 - (1 - n % 2), idx, idx - n)
    if n % 2 == 0:
        signed = np.where(idx == n // 2, n // 2, signed)
    return signed * (2.0 * math.pi / n)


def _cap(vx: float, vy: float, cap: float) -> tuple[float, float]:
    norm = math.hypot(vx, vy)
    if norm > cap:
        return vx * cap / norm, vy * cap / norm
    return vx, vy


def repulsive_velocity(scan: LidarScan, params: NavParams) -> Repulsion:
    """Sum of FIRAS-style contributions of all valid beams inside the influence distance."""
    if scan.beam_count == 0:
        raise InvalidSpecError("scan has no beams")
    if not np.any(scan.valid):
        return Repulsion(0.0, 0.0, True)
    angles = _signed_angles(scan.beam_count)
    r = np.where(scan.valid, scan.ranges, np.inf)
    near = r < params.influence_distance
    rn = r[near]
    mag = params.k_rep * (1.0 / rn - 1.0 / params.influence_distance) / (rn * rn)
    a = angles[near]
    # vectorized sin is not exactly odd; evaluate on |a| so mirrored beams cancel exactly
    abs_a = np.abs(a)
    # fsum is exactly rounded, so the result does not depend on beam order
    vx = -math.fsum(mag * np.cos(abs_a))
    # the rear beam (angle pi) is its own mirror image; its lateral part must be exactly 0
    sin_a = np.where(abs_a >= math.pi, 0.0, np.sign(a) * np.sin(abs_a))
    vy = -math.fsum(mag * sin_a)
    vx, vy = _cap(vx, vy, params.v_cap)
    return Repulsion(vx + 0.0, vy + 0.0, False)


def fill_invalid(scan: LidarScan, params: NavParams) -> np.ndarray:
    """Replace invalid beams by 7.0 inside far gaps and 0.0 everywhere else."""
    r = np.where(scan.valid, scan.ranges, 0.0).astype(float)
    valid = scan.valid
    n = scan.beam_count
    if valid.all() or not valid.any():
        return r
    start = int(np.flatnonzero(valid)[0])
    i = 0
    while i < n:
        k = (start + i) % n
        if valid[k]:
            i += 1
            continue
        j = i
        while not valid[(start + j) % n]:
            j += 1
        left = (start + i - 1) % n
        right = (start + j) % n
        if scan.ranges[left] >= params.far_flank and scan.ranges[right] >= params.far_flank:
            for m in range(i, j):
                r[(start + m) % n] = LIDAR_MAX_VALID
        i = j
    return r


def smooth_ranges(ranges: np.ndarray, window: int) -> np.ndarray:
    """Circular moving average; each window is summed with fsum."""
    n = len(ranges)
    half = window // 2
    padded = np.concatenate([ranges[n - half:], ranges, ranges[:half]]) if half else ranges
    return np.array([math.fsum(padded[i:i + window]) / window for i in range(n)])


def open_space_heading(scan: LidarScan, params: NavParams) -> Heading:
    """Body angle of the deepest smoothed gap in the front sector.

    Ranges tied with the maximum (within ``tie_tolerance``) form runs; the
    run closest to straight ahead wins and its centre angle is returned.
    Two runs equally far on opposite sides resolve to 0.
    """
    if scan.beam_count == 0:
        raise InvalidSpecError("scan has no beams")
    n = scan.beam_count
    angles = _signed_angles(n)
    front = np.abs(angles) <= params.front_half_width + 1e-12
    if not np.any(scan.valid & front):
        return Heading(0.0, True)
    smoothed = smooth_ranges(fill_invalid(scan, params), params.window)
    order = np.flatnonzero(front)
    order = order[np.argsort(angles[order], kind="stable")]
    values = smoothed[order]
    peak = values.max()
    tied = values >= peak - params.tie_tolerance
    runs: list[tuple[float, float]] = []
    k = 0
    while k < len(order):
        if not tied[k]:
            k += 1
            continue
        m = k
        while m + 1 < len(order) and tied[m + 1]:
            m += 1
        runs.append((float(angles[order[k]]), float(angles[order[m]])))
        k = m + 1
    centres = [0.5 * (lo + hi) for lo, hi in runs]
    best = min(abs(c) for c in centres)
    chosen = [c for c in centres if abs(c) == best]
    if len(chosen) > 1 and min(chosen) < 0.0 < max(chosen):
        return Heading(0.0, False)
    return Heading(chosen[0] + 0.0, False)


def compose(repulsion: Repulsion, heading: Heading, params: NavParams) -> NavReference:
    degraded = repulsion.degraded or heading.degraded
    cruise = 0.0 if degraded else params.cruise
    vx, vy = _cap(cruise + repulsion.vx, repulsion.vy, params.v_cap)
    limit = params.yaw_rate_max
    yaw_rate = min(max(params.k_heading * heading.error, -limit), limit)
    return NavReference(vx, vy, params.z_ref, yaw_rate, degraded)


def navigate(scan: LidarScan, params: NavParams) -> NavReference:
    return compose(repulsive_velocity(scan, params), open_space_heading(scan, params), params)
