"""Seeded sensor models: 2D lidar, downward range finder, optical flow and IMU.

Ranges and rates follow the on-board hardware: the lidar reports 0.15 m to
12 m but anything above 7 m is discarded, the range finder reaches 40 m at
2.5 cm accuracy, and the flow sensor delivers body-frame velocity with
occasional gross outliers when the floor lacks texture.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dynamics import GRAVITY, VehicleState
from .errors import InvalidSpecError, QueryError
from .world import Pose, WorldGeometry, raycast_many, wall_distance

LIDAR_MIN_RANGE = 0.15
LIDAR_MAX_VALID = 7.0
LIDAR_MAX_RANGE = 12.0
LIDAR_BEAMS = 360
ALTIMETER_MAX_RANGE = 40.0
ALTIMETER_MAX_TILT = math.radians(80.0)
FLOW_MIN_HEIGHT = 0.3
FLOW_MAX_HEIGHT = 5.0


@dataclass(frozen=True)
class NoiseParams:
    lidar_sigma: float = 0.02
    altimeter_sigma: float = 0.025
    flow_sigma: float = 0.05
    flow_outlier_prob: float = 0.05
    flow_outlier_span: float = 0.5
    gyro_sigma: float = 0.005
    accel_sigma: float = 0.05
    gyro_bias: float = 0.002

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value >= 0.0):
                raise InvalidSpecError(f"{name} must be finite and >= 0, got {value}")
        if self.flow_outlier_prob > 1.0:
            raise InvalidSpecError(f"flow_outlier_prob must be in [0, 1], got {self.flow_outlier_prob}")

    @classmethod
    def noiseless(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class LidarScan:
    """One revolution of the planar scanner.  Invalid beams carry NaN ranges
    only when nothing was hit; otherwise the out-of-band noisy value is kept."""

    timestamp: float
    angles: np.ndarray
    ranges: np.ndarray
    valid: np.ndarray

    @property
    def beam_count(self) -> int:
        return len(self.angles)

    @classmethod
    def from_ranges(cls, ranges, timestamp: float = 0.0, valid=None) -> "LidarScan":
        """Build a scan from raw ranges, applying the standard validity band."""
        r = np.asarray(ranges, dtype=float)
        n = len(r)
        angles = 2.0 * np.pi * np.arange(n) / n
        if valid is None:
            valid = np.isfinite(r) & (r >= LIDAR_MIN_RANGE) & (r <= LIDAR_MAX_VALID)
        return cls(timestamp, angles, r, np.asarray(valid, dtype=bool))


@dataclass(frozen=True)
class AltimeterReading:
    timestamp: float
    range: float
    valid: bool


@dataclass(frozen=True)
class FlowReading:
    timestamp: float
    v_bx: float
    v_by: float
    valid: bool


@dataclass(frozen=True)
class ImuReading:
    timestamp: float
    gyro: tuple[float, float, float]
    accel: tuple[float, float, float]


def stream(master_seed: int, name: str) -> np.random.Generator:
    """Independent random stream for one named component."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), zlib.crc32(name.encode())]))


def beam_angles(beam_count: int = LIDAR_BEAMS) -> np.ndarray:
    return 2.0 * np.pi * np.arange(beam_count) / beam_count


def sample_lidar(
    geometry: WorldGeometry,
    pose: Pose,
    noise: NoiseParams,
    rng: np.random.Generator,
    timestamp: float = 0.0,
    beam_count: int = LIDAR_BEAMS,
) -> LidarScan:
    origin = (pose.x, pose.y)
    if not geometry.contains(origin) or wall_distance(geometry, origin) == 0.0:
        raise QueryError(f"lidar pose {origin} is outside free space")
    angles = beam_angles(beam_count)
    world = angles + pose.yaw
    dirs = np.column_stack([np.cos(world), np.sin(world)])
    true = raycast_many(geometry, origin, dirs, LIDAR_MAX_RANGE)
    # always draw, so the stream position does not depend on the geometry
    ranges = true + noise.lidar_sigma * rng.standard_normal(beam_count)
    valid = np.isfinite(ranges) & (ranges >= LIDAR_MIN_RANGE) & (ranges <= LIDAR_MAX_VALID)
    return LidarScan(timestamp, angles, ranges, valid)


def sample_altimeter(
    geometry: WorldGeometry,
    state: VehicleState,
    noise: NoiseParams,
    rng: np.random.Generator,
    timestamp: float = 0.0,
) -> AltimeterReading:
    """Slant range along the body -z axis to the floor plane."""
    e = rng.standard_normal()
    tilt_cos = math.cos(state.roll) * math.cos(state.pitch)
    if tilt_cos <= math.cos(ALTIMETER_MAX_TILT):
        return AltimeterReading(timestamp, math.nan, False)
    r = (state.z - geometry.floor_z) / tilt_cos + noise.altimeter_sigma * e
    return AltimeterReading(timestamp, r, bool(0.0 < r <= ALTIMETER_MAX_RANGE))


def sample_flow(
    state: VehicleState,
    noise: NoiseParams,
    rng: np.random.Generator,
    timestamp: float = 0.0,
    floor_z: float = 0.0,
) -> FlowReading:
    """Horizontal velocity in the yaw-aligned body frame, with sporadic outliers."""
    gauss = rng.standard_normal(2)
    coins = rng.random(2)
    spikes = rng.uniform(-noise.flow_outlier_span, noise.flow_outlier_span, 2)
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    v = np.array([c * state.vx + s * state.vy, -s * state.vx + c * state.vy])
    v = v + noise.flow_sigma * gauss + np.where(coins < noise.flow_outlier_prob, spikes, 0.0)
    height = state.z - floor_z
    valid = FLOW_MIN_HEIGHT <= height <= FLOW_MAX_HEIGHT and bool(np.all(np.isfinite(v)))
    return FlowReading(timestamp, float(v[0]), float(v[1]), valid)


def draw_gyro_bias(noise: NoiseParams, rng: np.random.Generator) -> tuple[float, float, float]:
    """Constant gyro bias of magnitude ``noise.gyro_bias`` in a random direction."""
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    b = noise.gyro_bias * d
    return float(b[0]), float(b[1]), float(b[2])


def euler_rates_to_body(roll: float, pitch: float, droll: float, dpitch: float, dyaw: float):
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    p = droll - sp * dyaw
    q = cr * dpitch + sr * cp * dyaw
    r = -sr * dpitch + cr * cp * dyaw
    return p, q, r


def world_to_body(state: VehicleState, vec) -> tuple[float, float, float]:
    """Apply ``R^T`` for the vehicle attitude to a world-frame vector."""
    cr, sr = math.cos(state.roll), math.sin(state.roll)
    cp, sp = math.cos(state.pitch), math.sin(state.pitch)
    cy, sy = math.cos(state.yaw), math.sin(state.yaw)
    r = (
        (cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr),
        (sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr),
        (-sp, cp * sr, cp * cr),
    )
    x, y, z = vec
    return (
        r[0][0] * x + r[1][0] * y + r[2][0] * z,
        r[0][1] * x + r[1][1] * y + r[2][1] * z,
        r[0][2] * x + r[1][2] * y + r[2][2] * z,
    )


def sample_imu(
    state: VehicleState,
    state_derivative,
    noise: NoiseParams,
    rng: np.random.Generator,
    timestamp: float = 0.0,
    bias: tuple[float, float, float] = (0.0, 0.0, 0.0),
    g: float = GRAVITY,
) -> ImuReading:
    """Gyro body rates and accelerometer specific force.

    ``state_derivative`` is in :func:`dynamics.derivative` order.
    """
    d = np.asarray(state_derivative, dtype=float)
    gn = rng.standard_normal(3)
    an = rng.standard_normal(3)
    p, q, r = euler_rates_to_body(state.roll, state.pitch, d[6], d[7], d[8])
    gyro = (
        p + bias[0] + noise.gyro_sigma * gn[0],
        q + bias[1] + noise.gyro_sigma * gn[1],
        r + bias[2] + noise.gyro_sigma * gn[2],
    )
    f = world_to_body(state, (d[3], d[4], d[5] + g))
    accel = tuple(f[i] + noise.accel_sigma * an[i] for i in range(3))
    return ImuReading(timestamp, tuple(float(v) for v in gyro), tuple(float(v) for v in accel))


@dataclass
class SensorSuite:
    """Owns per-sensor random streams derived from one master seed."""

    noise: NoiseParams
    seed: int
    beam_count: int = LIDAR_BEAMS
    rngs: dict = field(init=False)
    gyro_bias: tuple[float, float, float] = field(init=False)

    def __post_init__(self) -> None:
        self.rngs = {name: stream(self.seed, name) for name in ("lidar", "altimeter", "flow", "imu", "imu_bias")}
        self.gyro_bias = draw_gyro_bias(self.noise, self.rngs["imu_bias"])

    def lidar(self, geometry: WorldGeometry, state: VehicleState, t: float) -> LidarScan:
        pose = Pose(state.x, state.y, state.z, state.yaw)
        return sample_lidar(geometry, pose, self.noise, self.rngs["lidar"], t, self.beam_count)

    def altimeter(self, geometry: WorldGeometry, state: VehicleState, t: float) -> AltimeterReading:
        return sample_altimeter(geometry, state, self.noise, self.rngs["altimeter"], t)

    def flow(self, geometry: WorldGeometry, state: VehicleState, t: float) -> FlowReading:
        return sample_flow(state, self.noise, self.rngs["flow"], t, geometry.floor_z)

    def imu(self, state: VehicleState, state_derivative, t: float, g: float = GRAVITY) -> ImuReading:
        return sample_imu(state, state_derivative, self.noise, self.rngs["imu"], t, self.gyro_bias, g)
