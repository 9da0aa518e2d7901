"""Yaw-free state estimation from IMU, optical flow and the downward range finder.

Attitude comes from a complementary filter, altitude from the tilt
compensated range finder, and velocities from first-order low-pass filters
over the flow readings and a finite difference of the altitude.  Heading is
deliberately absent: without a usable magnetometer or GNSS it is not
observable, so :class:`StateEstimate` has no field for it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .dynamics import GRAVITY
from .errors import ContractError, InvalidSpecError, TunnelNavError
from .sensors import AltimeterReading, FlowReading, ImuReading

MIN_TILT_COS = 0.17


class ReadingRejected(TunnelNavError):
    """A sensor reading was discarded (e.g. excessive tilt)."""


@dataclass(frozen=True)
class FilterParams:
    flow_cutoff_hz: float = 2.0
    vz_cutoff_hz: float = 3.0
    complementary_gain: float = 0.02
    vz_baseline: float = 0.1
    attitude_timeout: float = 0.2
    altitude_timeout: float = 0.2
    flow_timeout: float = 0.2

    def __post_init__(self) -> None:
        for name in ("flow_cutoff_hz", "vz_cutoff_hz", "vz_baseline",
                     "attitude_timeout", "altitude_timeout", "flow_timeout"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise InvalidSpecError(f"{name} must be > 0, got {value}")
        if not 0.0 < self.complementary_gain < 1.0:
            raise InvalidSpecError(f"complementary_gain must be in (0, 1), got {self.complementary_gain}")


def cutoff_alpha(dt: float, cutoff_hz: float) -> float:
    """Gain of a first-order low-pass with cutoff ``cutoff_hz`` sampled at ``dt``."""
    return dt / (dt + 1.0 / (2.0 * math.pi * cutoff_hz))


def lowpass_update(prev: float, raw: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 1.0:
        return raw
    # increment form: a settled filter (prev == raw) stays put exactly
    return prev + alpha * (raw - prev)


def accel_tilt(accel) -> tuple[float, float]:
    """Roll and pitch of the gravity direction seen in a specific-force reading."""
    ax, ay, az = accel
    return math.atan2(ay, az), math.atan2(-ax, math.hypot(ay, az))


def attitude_update(prev: tuple[float, float], imu: ImuReading, dt: float, beta: float,
                    g: float = GRAVITY) -> tuple[float, float]:
    """One complementary-filter step.

    Gyro rates are mapped to Euler rates at the previous estimate and
    integrated; the accelerometer tilt is blended in with weight ``beta``
    unless the specific-force magnitude is outside [0.5 g, 1.5 g].
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    phi, theta = prev
    p, q, r = imu.gyro
    cphi, sphi = math.cos(phi), math.sin(phi)
    ttheta = math.tan(theta)
    phi_g = phi + dt * (p + sphi * ttheta * q + cphi * ttheta * r)
    theta_g = theta + dt * (cphi * q - sphi * r)
    norm = math.sqrt(sum(a * a for a in imu.accel))
    if not 0.5 * g <= norm <= 1.5 * g:
        return phi_g, theta_g
    phi_a, theta_a = accel_tilt(imu.accel)
    return (1.0 - beta) * phi_g + beta * phi_a, (1.0 - beta) * theta_g + beta * theta_a


def tilt_compensate(slant_range: float, phi: float, theta: float) -> float:
    c = math.cos(phi) * math.cos(theta)
    if not c > MIN_TILT_COS:
        raise ReadingRejected(f"tilt too large for altitude compensation (cos product {c:.3f})")
    return slant_range * c


@dataclass(frozen=True, slots=True)
class Health:
    """Per-channel staleness flags (True = stale)."""

    attitude: bool = False
    altitude: bool = False
    velocity_xy: bool = False
    velocity_z: bool = False

    @property
    def all_fresh(self) -> bool:
        return not (self.attitude or self.altitude or self.velocity_xy or self.velocity_z)


@dataclass(frozen=True, slots=True)
class StateEstimate:
    t: float
    z_hat: float
    vx_hat: float
    vy_hat: float
    vz_hat: float
    phi_hat: float
    theta_hat: float
    health: Health


def assemble(t: float, attitude: tuple[float, float], z_hat: float,
             velocities: tuple[float, float, float], health: Health,
             previous_t: Optional[float] = None) -> StateEstimate:
    if previous_t is not None and t < previous_t:
        raise ContractError(f"estimate timestamp regressed: {t} < {previous_t}")
    vals = (z_hat, *velocities, *attitude)
    if not all(math.isfinite(v) for v in vals):
        raise ContractError(f"non-finite estimate at t={t}: {vals}")
    return StateEstimate(t, z_hat, velocities[0], velocities[1], velocities[2],
                         attitude[0], attitude[1], health)


class VelocityFilter:
    """Low-pass filtered horizontal flow and finite-differenced vertical speed."""

    def __init__(self, params: FilterParams):
        self.params = params
        self.vx = 0.0
        self.vy = 0.0
        self.vz = 0.0
        self.last_flow_t: Optional[float] = None
        self.last_alt_t: Optional[float] = None
        self._z_history: deque[tuple[float, float]] = deque()

    def update_flow(self, flow: FlowReading) -> tuple[float, float]:
        if not flow.valid:
            return self.vx, self.vy
        if self.last_flow_t is None:
            self.vx, self.vy = flow.v_bx, flow.v_by
        else:
            dt = flow.timestamp - self.last_flow_t
            if dt > 0.0:
                a = cutoff_alpha(dt, self.params.flow_cutoff_hz)
                self.vx = lowpass_update(self.vx, flow.v_bx, a)
                self.vy = lowpass_update(self.vy, flow.v_by, a)
        self.last_flow_t = flow.timestamp
        return self.vx, self.vy

    def update_altitude(self, t: float, z_hat: float) -> float:
        hist = self._z_history
        prev_t = self.last_alt_t
        hist.append((t, z_hat))
        while len(hist) > 2 and t - hist[1][0] >= self.params.vz_baseline:
            hist.popleft()
        self.last_alt_t = t
        t_old, z_old = hist[0]
        if prev_t is None or t <= t_old or t <= prev_t:
            return self.vz
        slope = (z_hat - z_old) / (t - t_old)
        a = cutoff_alpha(t - prev_t, self.params.vz_cutoff_hz)
        self.vz = lowpass_update(self.vz, slope, a)
        return self.vz


class StateEstimator:
    """Event-driven estimator; feed readings in time order, read snapshots."""

    def __init__(self, params: FilterParams = FilterParams(), g: float = GRAVITY):
        self.params = params
        self.g = g
        self.phi = 0.0
        self.theta = 0.0
        self.z_hat = 0.0
        self.velocity = VelocityFilter(params)
        self.last_imu_t: Optional[float] = None
        self.last_z_t: Optional[float] = None
        self.last_snapshot_t: Optional[float] = None
        self.rejected_altimeter = 0

    def on_imu(self, imu: ImuReading) -> None:
        if self.last_imu_t is None:
            self.phi, self.theta = accel_tilt(imu.accel)
        else:
            dt = imu.timestamp - self.last_imu_t
            if dt > 0.0:
                self.phi, self.theta = attitude_update(
                    (self.phi, self.theta), imu, dt, self.params.complementary_gain, self.g)
        self.last_imu_t = imu.timestamp

    def on_altimeter(self, reading: AltimeterReading) -> None:
        if not reading.valid:
            return
        try:
            z = tilt_compensate(reading.range, self.phi, self.theta)
        except ReadingRejected:
            self.rejected_altimeter += 1
            return
        self.z_hat = z
        self.last_z_t = reading.timestamp
        self.velocity.update_altitude(reading.timestamp, z)

    def on_flow(self, reading: FlowReading) -> None:
        self.velocity.update_flow(reading)

    def handle(self, reading) -> None:
        if isinstance(reading, ImuReading):
            self.on_imu(reading)
        elif isinstance(reading, AltimeterReading):
            self.on_altimeter(reading)
        elif isinstance(reading, FlowReading):
            self.on_flow(reading)
        else:
            raise TypeError(f"unsupported reading type {type(reading).__name__}")

    def health(self, t: float) -> Health:
        p = self.params

        def stale(last: Optional[float], timeout: float) -> bool:
            return last is None or t - last > timeout

        alt_stale = stale(self.last_z_t, p.altitude_timeout)
        return Health(
            attitude=stale(self.last_imu_t, p.attitude_timeout),
            altitude=alt_stale,
            velocity_xy=stale(self.velocity.last_flow_t, p.flow_timeout),
            velocity_z=alt_stale,
        )

    def snapshot(self, t: float) -> StateEstimate:
        v = self.velocity
        est = assemble(t, (self.phi, self.theta), self.z_hat, (v.vx, v.vy, v.vz),
                       self.health(t), self.last_snapshot_t)
        self.last_snapshot_t = t
        return est
