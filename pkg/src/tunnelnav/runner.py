"""Deterministic multi-rate mission loop, telemetry and run outputs.

One physics tick fires, in order: sensor sampling, estimator updates,
navigation (on a new scan), NMPC (at its rate, held otherwise), the
dynamics step, the collision check, mapping (at its rate) and telemetry (at
the control rate).  Virtual time only; nothing depends on the wall clock
except the reported runtime.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import control, dynamics, estimation, mapping, navigation
from .config import MappingConfig, SimConfig
from .dynamics import ControlCommand, VehicleState
from .errors import ContractError, NumericError, TunnelNavError
from .sensors import LidarScan, SensorSuite
from .world import Pose, build_tunnel, clearance, write_polylines

TELEMETRY_COLUMNS = (
    "t",
    "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw",
    "z_hat", "vx_hat", "vy_hat", "vz_hat", "phi_hat", "theta_hat",
    "stale_attitude", "stale_altitude", "stale_velocity_xy", "stale_velocity_z",
    "ref_vx", "ref_vy", "ref_z", "ref_yaw_rate", "nav_degraded",
    "cmd_thrust", "cmd_roll", "cmd_pitch", "cmd_yaw_rate",
    "nmpc_cost", "nmpc_iterations", "nmpc_grad_norm", "nmpc_converged",
    "collision", "clearance",
)
SCAN_LOG_HEADER = "t,x,y,yaw,ranges..."

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_COLLISION = 2
EXIT_NUMERIC = 3


def format_value(value) -> str:
    """9 significant digits for floats (trailing zeros kept); ints and flags verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == 0.0:
        v = 0.0
    return f"{v:#.9g}"


@dataclass(frozen=True)
class TelemetryRecord:
    t: float
    state: VehicleState
    estimate: estimation.StateEstimate
    reference: navigation.NavReference
    command: ControlCommand
    nmpc_cost: float
    nmpc_iterations: int
    nmpc_grad_norm: float
    nmpc_converged: bool
    collision: bool
    clearance: float

    def values(self) -> tuple:
        s, e, r, c, h = self.state, self.estimate, self.reference, self.command, self.estimate.health
        return (
            self.t,
            s.x, s.y, s.z, s.vx, s.vy, s.vz, s.roll, s.pitch, s.yaw,
            e.z_hat, e.vx_hat, e.vy_hat, e.vz_hat, e.phi_hat, e.theta_hat,
            h.attitude, h.altitude, h.velocity_xy, h.velocity_z,
            r.vx, r.vy, r.z_ref, r.yaw_rate, r.degraded,
            c.thrust, c.roll_ref, c.pitch_ref, c.yaw_rate,
            self.nmpc_cost, self.nmpc_iterations, self.nmpc_grad_norm, self.nmpc_converged,
            self.collision, self.clearance,
        )


class TelemetryWriter:
    """Streams records to CSV, enforcing strictly increasing time."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="ascii", newline="")
        self._fh.write(",".join(TELEMETRY_COLUMNS) + "\n")
        self._last_t: Optional[float] = None
        self.count = 0

    def write(self, record: TelemetryRecord) -> None:
        if self._last_t is not None and not record.t > self._last_t:
            raise ContractError(f"telemetry time not increasing: {record.t} after {self._last_t}")
        self._last_t = record.t
        self._fh.write(",".join(format_value(v) for v in record.values()) + "\n")
        self.count += 1

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "TelemetryWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_telemetry(records: Iterable[TelemetryRecord], path: str | Path) -> None:
    records = list(records)
    for a, b in zip(records, records[1:]):
        if not b.t > a.t:
            raise ContractError(f"telemetry time not increasing: {b.t} after {a.t}")
    with TelemetryWriter(path) as writer:
        for rec in records:
            writer.write(rec)


def read_telemetry(path: str | Path) -> dict[str, np.ndarray]:
    """Load a telemetry CSV into one float array per column."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    header = lines[0].split(",")
    if not lines[1:]:
        return {name: np.zeros(0) for name in header}
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return {name: data[:, i] for i, name in enumerate(header)}


@dataclass
class MissionSummary:
    completed: bool
    termination: str
    duration: float
    collision_count: int
    distance_traveled: float
    altitude_rms: float
    mean_forward_speed: float
    min_clearance: float
    wall_hit_rate: float
    corridor_false_occupancy: float
    map_width: int
    map_height: int
    lidar_scans: int
    altimeter_samples: int
    flow_samples: int
    imu_samples: int
    nmpc_solves: int
    map_updates: int
    telemetry_records: int
    runtime: float = 0.0

    def to_json(self) -> str:
        """Flat JSON; the wall-clock runtime is left out so the file is reproducible."""
        data = dataclasses.asdict(self)
        data.pop("runtime")
        return json.dumps({k: _json_value(v) for k, v in data.items()}, sort_keys=True, indent=1) + "\n"


def _json_value(v):
    if isinstance(v, float):
        return float(format_value(v))
    return v


class _Schedule:
    """Integer-exact event schedule: event ``k`` of a ``rate`` Hz stream is
    handled on physics tick ``floor(k * physics / rate)`` and stamped ``k / rate``."""

    def __init__(self, rate: int, physics: int):
        self.rate = rate
        self.physics = physics
        self.k = 0

    def due(self, tick: int) -> list[float]:
        stamps = []
        while (self.k * self.physics) // self.rate <= tick:
            stamps.append(self.k / self.rate)
            self.k += 1
        return stamps


class Simulation:
    """One mission; construct, then call :meth:`run` once."""

    def __init__(self, config: SimConfig, out_dir: str | Path | None = None,
                 keep_records: bool = True, keep_solutions: bool = False):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.keep_records = keep_records
        self.keep_solutions = keep_solutions
        self.geometry = build_tunnel(config.tunnel, config.seed)
        self.sensors = SensorSuite(config.noise, config.seed)
        self.estimator = estimation.StateEstimator(config.filters, config.dynamics.g)
        self.controller = control.NmpcController(config.nmpc, config.dynamics)
        mc = config.mapping
        self.grid = mapping.OccupancyGrid.for_geometry(
            self.geometry, mc.resolution, mc.margin, l_occ=mc.l_occ, l_free=mc.l_free, clamp=mc.clamp)
        self.records: list[TelemetryRecord] = []
        self.solutions: list[control.NmpcSolution] = []
        self.commands: list[ControlCommand] = []
        self.state = config.initial

    def run(self) -> MissionSummary:
        cfg = self.config
        rates = cfg.rates
        dt = 1.0 / rates.physics
        n_ticks = max(1, int(round(cfg.duration * rates.physics)))
        started = time.perf_counter()

        schedules = {name: _Schedule(getattr(rates, name), rates.physics)
                     for name in ("lidar", "altimeter", "flow", "imu", "nmpc", "mapping")}
        counts = {name: 0 for name in schedules}
        writer = scan_log = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            writer = TelemetryWriter(self.out_dir / "telemetry.csv")
            scan_log = open(self.out_dir / "scans.csv", "w", encoding="ascii")
            scan_log.write(SCAN_LOG_HEADER + "\n")
            write_polylines(self.geometry, self.out_dir / "tunnel.txt")

        geometry = self.geometry
        params = cfg.dynamics
        state = self.state
        cmd = dynamics.hover_command(params)
        reference = navigation.NavReference(0.0, 0.0, cfg.nav.z_ref, 0.0, True)
        solution: Optional[control.NmpcSolution] = None
        estimate = None
        latest_scan: Optional[tuple[LidarScan, Pose]] = None
        dead_reckoned = [state.x, state.y, state.yaw]
        collisions = 0
        in_collision = False
        min_clear = math.inf
        distance = 0.0
        start_station = geometry.station((state.x, state.y))
        termination = "duration"
        elapsed = 0.0
        z_err_sq = []
        last_record_t = None

        def emit(t_rec: float, st: VehicleState) -> None:
            nonlocal last_record_t
            sol = solution
            rec = TelemetryRecord(
                t_rec, st, estimate, reference, cmd,
                sol.cost if sol else math.nan, sol.iterations if sol else 0,
                sol.grad_norm if sol else math.nan, sol.converged if sol else False,
                in_collision, clearance(geometry, (st.x, st.y)),
            )
            last_record_t = t_rec
            z_err_sq.append((st.z - cfg.nav.z_ref) ** 2)
            if self.keep_records:
                self.records.append(rec)
            if writer is not None:
                writer.write(rec)

        try:
            for tick in range(n_ticks):
                t = tick * dt
                # sensor sampling
                events = []
                for stamp in schedules["lidar"].due(tick):
                    scan = self.sensors.lidar(geometry, state, stamp)
                    events.append((stamp, 0, scan))
                for stamp in schedules["altimeter"].due(tick):
                    events.append((stamp, 1, self.sensors.altimeter(geometry, state, stamp)))
                for stamp in schedules["flow"].due(tick):
                    events.append((stamp, 2, self.sensors.flow(geometry, state, stamp)))
                imu_stamps = schedules["imu"].due(tick)
                if imu_stamps:
                    deriv = dynamics.derivative(state, cmd, params)
                    for stamp in imu_stamps:
                        events.append((stamp, 3, self.sensors.imu(state, deriv, stamp, params.g)))
                events.sort(key=lambda e: (e[0], e[1]))
                # estimator and navigation
                new_scan = None
                for stamp, kind, reading in events:
                    if kind == 0:
                        counts["lidar"] += 1
                        new_scan = reading
                        latest_scan = (reading, self._mapping_pose(state, dead_reckoned))
                    elif kind == 1:
                        counts["altimeter"] += 1
                        self.estimator.on_altimeter(reading)
                    elif kind == 2:
                        counts["flow"] += 1
                        self.estimator.on_flow(reading)
                    else:
                        counts["imu"] += 1
                        self.estimator.on_imu(reading)
                        self._dead_reckon_yaw(reading, 1.0 / rates.imu, dead_reckoned)
                if new_scan is not None:
                    reference = navigation.navigate(new_scan, cfg.nav)
                # NMPC at its own rate, zero-order hold otherwise
                control_tick = bool(schedules["nmpc"].due(tick))
                if control_tick:
                    counts["nmpc"] += 1
                    estimate = self.estimator.snapshot(t)
                    solution = self.controller.update(control.estimate_state(estimate), reference)
                    cmd = control.command(solution, reference.yaw_rate, params.yaw_rate_max)
                    if self.keep_solutions:
                        self.solutions.append(solution)
                        self.commands.append(cmd)
                prev = state
                state = dynamics.step(state, cmd, params, dt)
                elapsed = (tick + 1) * dt
                distance += math.hypot(state.x - prev.x, state.y - prev.y)
                if estimate is not None and cfg.mapping.pose_source == "estimate":
                    c, s = math.cos(dead_reckoned[2]), math.sin(dead_reckoned[2])
                    dead_reckoned[0] += dt * (c * estimate.vx_hat - s * estimate.vy_hat)
                    dead_reckoned[1] += dt * (s * estimate.vx_hat + c * estimate.vy_hat)
                # collision check
                hit = dynamics.check_collision(state, geometry, cfg.radius)
                if hit and not in_collision:
                    collisions += 1
                in_collision = hit
                min_clear = min(min_clear, clearance(geometry, (state.x, state.y)))
                # mapping
                if schedules["mapping"].due(tick) and latest_scan is not None:
                    counts["mapping"] += 1
                    scan, pose = latest_scan
                    self._integrate(scan, pose, scan_log)
                # telemetry
                if control_tick:
                    emit(t, prev)
                if hit and cfg.stop_on_collision:
                    termination = "collision"
                    emit(elapsed, state)
                    break
        except (NumericError, TunnelNavError, FloatingPointError) as exc:
            termination = "numeric"
            self.abort_reason = str(exc)
        finally:
            if writer is not None:
                writer.close()
            if scan_log is not None:
                scan_log.close()
        self.state = state

        wall_hit, false_occ = mapping.map_stats(self.grid, geometry)
        if self.out_dir is not None:
            mapping.export_pgm(self.grid, self.out_dir / "map.pgm")
        end_station = geometry.station((state.x, state.y))
        summary = MissionSummary(
            completed=termination == "duration",
            termination=termination,
            duration=elapsed,
            collision_count=collisions,
            distance_traveled=distance,
            altitude_rms=math.sqrt(sum(z_err_sq) / len(z_err_sq)) if z_err_sq else 0.0,
            mean_forward_speed=(end_station - start_station) / elapsed if elapsed > 0 else 0.0,
            min_clearance=min_clear if math.isfinite(min_clear) else 0.0,
            wall_hit_rate=wall_hit,
            corridor_false_occupancy=false_occ,
            map_width=self.grid.width,
            map_height=self.grid.height,
            lidar_scans=counts["lidar"],
            altimeter_samples=counts["altimeter"],
            flow_samples=counts["flow"],
            imu_samples=counts["imu"],
            nmpc_solves=counts["nmpc"],
            map_updates=counts["mapping"],
            telemetry_records=len(z_err_sq),
            runtime=time.perf_counter() - started,
        )
        if self.out_dir is not None:
            (self.out_dir / "summary.json").write_text(summary.to_json())
        return summary

    def _mapping_pose(self, state: VehicleState, dead_reckoned: list[float]) -> Pose:
        if self.config.mapping.pose_source == "estimate":
            return Pose(dead_reckoned[0], dead_reckoned[1], state.z, dead_reckoned[2])
        return Pose(state.x, state.y, state.z, state.yaw)

    def _dead_reckon_yaw(self, imu, dt: float, dead_reckoned: list[float]) -> None:
        phi, theta = self.estimator.phi, self.estimator.theta
        _, q, r = imu.gyro
        dead_reckoned[2] += dt * (math.sin(phi) * q + math.cos(phi) * r) / math.cos(theta)

    def _integrate(self, scan: LidarScan, pose: Pose, scan_log) -> None:
        try:
            mapping.integrate_scan(self.grid, pose, scan)
        except mapping.BoundsError:
            return
        if scan_log is not None:
            ranges = np.where(scan.valid, scan.ranges, np.nan)
            fields = [repr(float(scan.timestamp)), repr(pose.x), repr(pose.y), repr(pose.yaw)]
            fields += ["nan" if math.isnan(r) else repr(float(r)) for r in ranges]
            scan_log.write(",".join(fields) + "\n")


def run(config: SimConfig, out_dir: str | Path | None = None) -> MissionSummary:
    return Simulation(config, out_dir, keep_records=False).run()


def rebuild_map(run_dir: str | Path, mapping_config: MappingConfig = MappingConfig(),
                out_path: str | Path | None = None) -> Path:
    """Re-integrate the logged scans of a run directory and write the PGM again."""
    run_dir = Path(run_dir)
    ox, oy, res, width, height = mapping.read_meta(run_dir / "map.meta")
    grid = mapping.OccupancyGrid((ox, oy), width, height, res, l_occ=mapping_config.l_occ,
                                 l_free=mapping_config.l_free, clamp=mapping_config.clamp)
    lines = (run_dir / "scans.csv").read_text(encoding="ascii").splitlines()[1:]
    for line in lines:
        parts = line.split(",")
        t, x, y, yaw = (float(v) for v in parts[:4])
        ranges = np.array([float(v) for v in parts[4:]])
        scan = LidarScan.from_ranges(ranges, timestamp=t, valid=np.isfinite(ranges))
        mapping.integrate_scan(grid, Pose(x, y, 0.0, yaw), scan)
    return mapping.export_pgm(grid, out_path if out_path is not None else run_dir / "map.pgm")
