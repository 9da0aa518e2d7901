"""Reduced-order quadrotor model driven by (thrust, roll, pitch, yaw-rate).

Translation is a point mass with mass-normalized thrust and linear drag;
roll and pitch follow their references through a first-order lag and yaw
integrates the commanded rate.  World frame is x forward along the tunnel,
y left, z up; the body rotation is ``R = Rz(yaw) Ry(pitch) Rx(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, NumericError
from .world import WorldGeometry, clearance, normalize_angle

GRAVITY = 9.81
MAX_STEP = 0.01


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.y, self.z, self.vx, self.vy, self.vz, self.roll, self.pitch, self.yaw)

    @classmethod
    def from_sequence(cls, values) -> "VehicleState":
        return cls(*(float(v) for v in values))

    def validate(self) -> None:
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise NumericError(f"non-finite vehicle state: {self}")
        if abs(self.roll) >= math.pi / 2 or abs(self.pitch) >= math.pi / 2:
            raise NumericError(f"tilt outside (-pi/2, pi/2): roll={self.roll}, pitch={self.pitch}")


@dataclass(frozen=True)
class DynamicsParams:
    g: float = GRAVITY
    tau: float = 0.15
    drag_x: float = 0.1
    drag_y: float = 0.1
    drag_z: float = 0.1
    thrust_max: float = 2.0 * GRAVITY
    tilt_max: float = 0.35
    yaw_rate_max: float = 0.5

    def __post_init__(self) -> None:
        if not self.g > 0.0:
            raise InvalidSpecError(f"g must be > 0, got {self.g}")
        if not self.tau > 0.0:
            raise InvalidSpecError(f"tau must be > 0, got {self.tau}")
        for name in ("drag_x", "drag_y", "drag_z"):
            if not getattr(self, name) >= 0.0:
                raise InvalidSpecError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("thrust_max", "tilt_max", "yaw_rate_max"):
            if not getattr(self, name) > 0.0:
                raise InvalidSpecError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class ControlCommand:
    thrust: float
    roll_ref: float = 0.0
    pitch_ref: float = 0.0
    yaw_rate: float = 0.0

    def check_bounds(self, params: DynamicsParams, tol: float = 1e-12) -> None:
        vals = (self.thrust, self.roll_ref, self.pitch_ref, self.yaw_rate)
        if not all(math.isfinite(v) for v in vals):
            raise NumericError(f"non-finite command: {self}")
        if not (-tol <= self.thrust <= params.thrust_max + tol):
            raise InvalidSpecError(f"thrust {self.thrust} outside [0, {params.thrust_max}]")
        if abs(self.roll_ref) > params.tilt_max + tol or abs(self.pitch_ref) > params.tilt_max + tol:
            raise InvalidSpecError(f"attitude reference outside +/-{params.tilt_max}: {self}")
        if abs(self.yaw_rate) > params.yaw_rate_max + tol:
            raise InvalidSpecError(f"yaw rate {self.yaw_rate} outside +/-{params.yaw_rate_max}")


def hover_command(params: DynamicsParams = DynamicsParams()) -> ControlCommand:
    return ControlCommand(params.g, 0.0, 0.0, 0.0)


def _f(s, thrust, roll_ref, pitch_ref, yaw_rate, g, tau, ax, ay, az):
    _, _, _, vx, vy, vz, roll, pitch, yaw = s
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    # third column of Rz(yaw) Ry(pitch) Rx(roll), scaled by thrust
    return (
        vx,
        vy,
        vz,
        thrust * (cy * sp * cr + sy * sr) - ax * vx,
        thrust * (sy * sp * cr - cy * sr) - ay * vy,
        thrust * cp * cr - g - az * vz,
        (roll_ref - roll) / tau,
        (pitch_ref - pitch) / tau,
        yaw_rate,
    )


def derivative(state: VehicleState, cmd: ControlCommand, params: DynamicsParams) -> np.ndarray:
    """Time derivative in ``VehicleState`` field order (x, y, z, vx, vy, vz, roll, pitch, yaw)."""
    s = state.as_tuple()
    u = (cmd.thrust, cmd.roll_ref, cmd.pitch_ref, cmd.yaw_rate)
    if not all(math.isfinite(v) for v in s + u):
        raise NumericError("non-finite input to derivative")
    d = _f(s, *u, params.g, params.tau, params.drag_x, params.drag_y, params.drag_z)
    return np.array(d)


def step(state: VehicleState, cmd: ControlCommand, params: DynamicsParams, dt: float) -> VehicleState:
    """Advance ``state`` by one classical RK4 step of length ``dt``."""
    if not (0.0 < dt <= MAX_STEP):
        raise InvalidSpecError(f"dt must lie in (0, {MAX_STEP}], got {dt}")
    cmd.check_bounds(params)
    s0 = state.as_tuple()
    if not all(math.isfinite(v) for v in s0):
        raise NumericError(f"non-finite vehicle state: {state}")
    args = (cmd.thrust, cmd.roll_ref, cmd.pitch_ref, cmd.yaw_rate,
            params.g, params.tau, params.drag_x, params.drag_y, params.drag_z)
    h = 0.5 * dt
    k1 = _f(s0, *args)
    k2 = _f(tuple(a + h * b for a, b in zip(s0, k1)), *args)
    k3 = _f(tuple(a + h * b for a, b in zip(s0, k2)), *args)
    k4 = _f(tuple(a + dt * b for a, b in zip(s0, k3)), *args)
    s1 = [a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(s0, k1, k2, k3, k4)]
    if not all(math.isfinite(v) for v in s1):
        raise NumericError("integration produced non-finite state")
    s1[8] = normalize_angle(s1[8])
    new = VehicleState(*s1)
    if abs(new.roll) >= math.pi / 2 or abs(new.pitch) >= math.pi / 2:
        raise NumericError(f"tilt left (-pi/2, pi/2): {new}")
    return new


def check_collision(state: VehicleState, geometry: WorldGeometry, radius: float = 0.35) -> bool:
    """True if a sphere of ``radius`` around the vehicle touches a wall, floor or ceiling."""
    if not radius > 0.0:
        raise InvalidSpecError(f"radius must be > 0, got {radius}")
    if state.z < geometry.floor_z + radius or state.z > geometry.ceiling_z - radius:
        return True
    return clearance(geometry, (state.x, state.y)) < radius
