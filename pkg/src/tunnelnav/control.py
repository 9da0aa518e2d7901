"""Nonlinear MPC for (thrust, roll, pitch) with yaw-rate passed through.

The prediction model is the plant of :mod:`tunnelnav.dynamics` restricted
to a yaw-zero, body-aligned frame, with state ``(z, vx, vy, vz, roll,
pitch)`` and explicit Euler discretization.  The box-constrained problem is
solved by projected gradient descent with Armijo backtracking; gradients
come from one backward adjoint sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .dynamics import GRAVITY, ControlCommand, DynamicsParams, VehicleState
from .errors import ContractError, InvalidSpecError, NumericError
from .navigation import YAW_RATE_LIMIT

STATE_DIM = 6
CONTROL_DIM = 3
# After this many halvings from the initial step a line search is declared collapsed.
_MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class NmpcConfig:
    horizon: int = 20
    dt: float = 0.05
    q_vx: float = 10.0
    q_vy: float = 10.0
    q_vz: float = 5.0
    q_z: float = 20.0
    q_roll: float = 5.0
    q_pitch: float = 5.0
    r_thrust: float = 1.0
    r_roll: float = 8.0
    r_pitch: float = 8.0
    terminal_weight: float = 5.0
    thrust_max: float = 2.0 * GRAVITY
    tilt_max: float = 0.35
    max_iters: int = 100
    grad_tol: float = 1e-4
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 0.1

    def __post_init__(self) -> None:
        if isinstance(self.horizon, bool) or int(self.horizon) != self.horizon or self.horizon < 2:
            raise InvalidSpecError(f"horizon must be an integer >= 2, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise InvalidSpecError(f"dt must be > 0, got {self.dt}")
        for name in ("q_vx", "q_vy", "q_vz", "q_z", "r_thrust", "r_roll", "r_pitch"):
            if not getattr(self, name) > 0.0:
                raise InvalidSpecError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("q_roll", "q_pitch", "terminal_weight"):
            if not getattr(self, name) >= 0.0:
                raise InvalidSpecError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.thrust_max > 0.0:
            raise InvalidSpecError(f"thrust_max must be > 0, got {self.thrust_max}")
        if not 0.0 < self.tilt_max < math.pi / 2:
            raise InvalidSpecError(f"tilt_max must be in (0, pi/2), got {self.tilt_max}")
        if isinstance(self.max_iters, bool) or int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise InvalidSpecError(f"max_iters must be an integer >= 0, got {self.max_iters}")
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if not self.grad_tol >= 0.0:
            raise InvalidSpecError(f"grad_tol must be >= 0, got {self.grad_tol}")
        if not 0.0 < self.armijo_c < 1.0:
            raise InvalidSpecError(f"armijo_c must be in (0, 1), got {self.armijo_c}")
        if not 0.0 < self.backtrack < 1.0:
            raise InvalidSpecError(f"backtrack must be in (0, 1), got {self.backtrack}")
        if not self.initial_step > 0.0:
            raise InvalidSpecError(f"initial_step must be > 0, got {self.initial_step}")

    def weights(self) -> np.ndarray:
        return np.array([self.q_z, self.q_vx, self.q_vy, self.q_vz, self.q_roll, self.q_pitch,
                         self.r_thrust, self.r_roll, self.r_pitch, self.terminal_weight])

    def lower(self) -> np.ndarray:
        return np.array([0.0, -self.tilt_max, -self.tilt_max])

    def upper(self) -> np.ndarray:
        return np.array([self.thrust_max, self.tilt_max, self.tilt_max])


@dataclass(frozen=True, eq=False)
class NmpcSolution:
    controls: np.ndarray
    states: np.ndarray
    cost: float
    iterations: int
    grad_norm: float
    converged: bool
    cost_trace: tuple[float, ...] = ()
    reset: bool = False
    armijo_ok: bool = True

    @property
    def first(self) -> np.ndarray:
        return self.controls[0]


# ---------------------------------------------------------------- kernels
# model vector m = (dt, g, tau, drag_x, drag_y, drag_z)
# weight vector w = (q_z, q_vx, q_vy, q_vz, q_roll, q_pitch, r_T, r_roll, r_pitch, terminal)
# reference r = (z, vx, vy, vz)


@njit(cache=True)
def _rollout(x0, U, m):
    n = U.shape[0]
    dt, g, tau, ax, ay, az = m[0], m[1], m[2], m[3], m[4], m[5]
    X = np.empty((n + 1, 6))
    X[0, :] = x0
    for k in range(n):
        z, vx, vy, vz, ph, th = X[k, 0], X[k, 1], X[k, 2], X[k, 3], X[k, 4], X[k, 5]
        T, phr, thr = U[k, 0], U[k, 1], U[k, 2]
        cph, sph = math.cos(ph), math.sin(ph)
        cth, sth = math.cos(th), math.sin(th)
        X[k + 1, 0] = z + dt * vz
        X[k + 1, 1] = vx + dt * (T * sth * cph - ax * vx)
        X[k + 1, 2] = vy + dt * (-T * sph - ay * vy)
        X[k + 1, 3] = vz + dt * (T * cth * cph - g - az * vz)
        X[k + 1, 4] = ph + dt * (phr - ph) / tau
        X[k + 1, 5] = th + dt * (thr - th) / tau
    return X


@njit(cache=True)
def _cost_from_states(X, U, r, w, g):
    n = U.shape[0]
    total = 0.0
    for k in range(1, n + 1):
        ez = X[k, 0] - r[0]
        ex = X[k, 1] - r[1]
        ey = X[k, 2] - r[2]
        ev = X[k, 3] - r[3]
        stage = (w[0] * ez * ez + w[1] * ex * ex + w[2] * ey * ey + w[3] * ev * ev
                 + w[4] * X[k, 4] * X[k, 4] + w[5] * X[k, 5] * X[k, 5])
        if k == n:
            stage *= w[9]
        total += stage
    for k in range(n):
        dT = U[k, 0] - g
        total += w[6] * dT * dT + w[7] * U[k, 1] * U[k, 1] + w[8] * U[k, 2] * U[k, 2]
    return total


@njit(cache=True)
def _cost(x0, U, r, w, m):
    return _cost_from_states(_rollout(x0, U, m), U, r, w, m[1])


@njit(cache=True)
def _gradient(x0, U, r, w, m):
    n = U.shape[0]
    dt, g, tau = m[0], m[1], m[2]
    ax, ay, az = m[3], m[4], m[5]
    X = _rollout(x0, U, m)
    G = np.empty((n, 3))
    lam = np.empty(6)
    wn = w[9]
    lam[0] = wn * 2.0 * w[0] * (X[n, 0] - r[0])
    lam[1] = wn * 2.0 * w[1] * (X[n, 1] - r[1])
    lam[2] = wn * 2.0 * w[2] * (X[n, 2] - r[2])
    lam[3] = wn * 2.0 * w[3] * (X[n, 3] - r[3])
    lam[4] = wn * 2.0 * w[4] * X[n, 4]
    lam[5] = wn * 2.0 * w[5] * X[n, 5]
    for k in range(n - 1, -1, -1):
        ph, th = X[k, 4], X[k, 5]
        T = U[k, 0]
        cph, sph = math.cos(ph), math.sin(ph)
        cth, sth = math.cos(th), math.sin(th)
        l0, l1, l2, l3, l4, l5 = lam[0], lam[1], lam[2], lam[3], lam[4], lam[5]
        # dJ/du_k = dc/du_k + dt * (df/du)^T lambda_{k+1}
        G[k, 0] = 2.0 * w[6] * (T - g) + dt * (sth * cph * l1 - sph * l2 + cth * cph * l3)
        G[k, 1] = 2.0 * w[7] * U[k, 1] + dt * l4 / tau
        G[k, 2] = 2.0 * w[8] * U[k, 2] + dt * l5 / tau
        if k == 0:
            break
        # lambda_k = dl/dx_k + (I + dt * df/dx)^T lambda_{k+1}
        lam[0] = 2.0 * w[0] * (X[k, 0] - r[0]) + l0
        lam[1] = 2.0 * w[1] * (X[k, 1] - r[1]) + l1 * (1.0 - dt * ax)
        lam[2] = 2.0 * w[2] * (X[k, 2] - r[2]) + l2 * (1.0 - dt * ay)
        lam[3] = 2.0 * w[3] * (X[k, 3] - r[3]) + l3 * (1.0 - dt * az) + dt * l0
        lam[4] = (2.0 * w[4] * ph + l4 * (1.0 - dt / tau)
                  + dt * (-T * sth * sph * l1 - T * cph * l2 - T * cth * sph * l3))
        lam[5] = (2.0 * w[5] * th + l5 * (1.0 - dt / tau)
                  + dt * (T * cth * cph * l1 - T * sth * cph * l3))
    return G


@njit(cache=True)
def _project(U, lo, hi):
    P = np.empty_like(U)
    for k in range(U.shape[0]):
        for j in range(3):
            v = U[k, j]
            if v < lo[j]:
                v = lo[j]
            elif v > hi[j]:
                v = hi[j]
            P[k, j] = v
    return P


@njit(cache=True)
def _pg_norm(U, G, lo, hi):
    P = _project(U - G, lo, hi)
    return math.sqrt(np.sum((U - P) ** 2))


@njit(cache=True)
def _solve(x0, U0, r, w, m, lo, hi, max_iters, tol, c, shrink, step0):
    U = _project(U0, lo, hi)
    J = _cost(x0, U, r, w, m)
    trace = np.empty(max_iters + 1)
    trace[0] = J
    iters = 0
    armijo_ok = True
    converged = False
    pg = np.inf
    for _ in range(max_iters):
        G = _gradient(x0, U, r, w, m)
        pg = _pg_norm(U, G, lo, hi)
        if pg <= tol:
            converged = True
            break
        alpha = step0
        accepted = False
        Un = U
        Jn = J
        for _b in range(_MAX_BACKTRACKS):
            Un = _project(U - alpha * G, lo, hi)
            Jn = _cost(x0, Un, r, w, m)
            if Jn <= J + c * np.sum(G * (Un - U)):
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            break
        if Jn > J:
            armijo_ok = False
        U = Un
        J = Jn
        iters += 1
        trace[iters] = J
    if not converged:
        G = _gradient(x0, U, r, w, m)
        pg = _pg_norm(U, G, lo, hi)
        converged = max_iters > 0 and pg <= tol
    return U, J, iters, pg, converged, trace[: iters + 1], armijo_ok


# ---------------------------------------------------------------- public API


def model_vector(config: NmpcConfig, model: DynamicsParams) -> np.ndarray:
    return np.array([config.dt, model.g, model.tau, model.drag_x, model.drag_y, model.drag_z])


def reference_vector(ref) -> np.ndarray:
    """``(z, vx, vy, vz)`` target from a NavReference or a ``(vx, vy, z)`` triple."""
    if hasattr(ref, "z_ref"):
        return np.array([ref.z_ref, ref.vx, ref.vy, 0.0])
    vx, vy, z = ref
    return np.array([z, vx, vy, 0.0])


def hover_sequence(config: NmpcConfig, model: DynamicsParams = DynamicsParams()) -> np.ndarray:
    U = np.zeros((config.horizon, CONTROL_DIM))
    U[:, 0] = model.g
    return U


def model_state(state: VehicleState) -> np.ndarray:
    """Prediction-model state of a ground-truth vehicle state (velocity rotated into the yaw frame)."""
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    return np.array([state.z, c * state.vx + s * state.vy, -s * state.vx + c * state.vy,
                     state.vz, state.roll, state.pitch])


def estimate_state(est) -> np.ndarray:
    return np.array([est.z_hat, est.vx_hat, est.vy_hat, est.vz_hat, est.phi_hat, est.theta_hat])


def _check_inputs(x0, u_seq, config: NmpcConfig) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x0, dtype=float).reshape(-1)
    U = np.asarray(u_seq, dtype=float)
    if x.shape != (STATE_DIM,):
        raise ContractError(f"x0 must have {STATE_DIM} entries, got shape {x.shape}")
    if U.shape != (config.horizon, CONTROL_DIM):
        raise ContractError(f"u_seq must have shape ({config.horizon}, 3), got {U.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(U))):
        raise NumericError("non-finite NMPC inputs")
    tol = 1e-12
    if np.any(U < config.lower() - tol) or np.any(U > config.upper() + tol):
        raise ContractError("u_seq violates the control bounds")
    return x, U


def rollout(x0, u_seq, config: NmpcConfig, model: DynamicsParams = DynamicsParams()) -> np.ndarray:
    """Predicted states ``x_1 .. x_N`` as an ``(N, 6)`` array."""
    x, U = _check_inputs(x0, u_seq, config)
    X = _rollout(x, U, model_vector(config, model))
    if not np.all(np.isfinite(X)):
        raise NumericError("rollout diverged")
    return X[1:]


def cost(x0, u_seq, ref, config: NmpcConfig, model: DynamicsParams = DynamicsParams()) -> float:
    x, U = _check_inputs(x0, u_seq, config)
    return float(_cost(x, U, reference_vector(ref), config.weights(), model_vector(config, model)))


def gradient(x0, u_seq, ref, config: NmpcConfig, model: DynamicsParams = DynamicsParams()) -> np.ndarray:
    """Exact gradient of :func:`cost` with respect to every control, shape ``(N, 3)``."""
    x, U = _check_inputs(x0, u_seq, config)
    return _gradient(x, U, reference_vector(ref), config.weights(), model_vector(config, model))


def shift_warm_start(controls: np.ndarray) -> np.ndarray:
    return np.concatenate([controls[1:], controls[-1:]], axis=0)


def solve(x0, ref, warm_start: Optional[NmpcSolution] = None, config: NmpcConfig = NmpcConfig(),
          model: DynamicsParams = DynamicsParams()) -> NmpcSolution:
    """Projected-gradient solve warm-started from ``warm_start`` shifted by one step."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (STATE_DIM,) or not np.all(np.isfinite(x)):
        raise NumericError(f"invalid NMPC initial state {x0!r}")
    r = reference_vector(ref)
    w = config.weights()
    m = model_vector(config, model)
    lo, hi = config.lower(), config.upper()
    U0 = hover_sequence(config, model)
    if warm_start is not None:
        prev = np.asarray(warm_start.controls, dtype=float)
        if prev.shape == U0.shape:
            U0 = _project(shift_warm_start(prev), lo, hi)
    reset = False
    if not math.isfinite(_cost(x, U0, r, w, m)):
        U0 = _project(hover_sequence(config, model), lo, hi)
        reset = True
    U, J, iters, pg, converged, trace, armijo_ok = _solve(
        x, U0, r, w, m, lo, hi, config.max_iters, config.grad_tol,
        config.armijo_c, config.backtrack, config.initial_step)
    if not math.isfinite(J):
        raise NumericError("NMPC cost is not finite")
    X = _rollout(x, U, m)
    return NmpcSolution(
        controls=U, states=X[1:], cost=float(J), iterations=int(iters), grad_norm=float(pg),
        converged=bool(converged), cost_trace=tuple(float(v) for v in trace), reset=reset,
        armijo_ok=bool(armijo_ok),
    )


def command(solution: NmpcSolution, yaw_rate_ref: float, yaw_rate_max: float = YAW_RATE_LIMIT) -> ControlCommand:
    if solution.controls.shape[0] == 0:
        raise ContractError("empty NMPC solution")
    T, phi, theta = (float(v) for v in solution.controls[0])
    yaw_rate = min(max(float(yaw_rate_ref), -yaw_rate_max), yaw_rate_max)
    return ControlCommand(T, phi, theta, yaw_rate)


@dataclass
class NmpcController:
    """Receding-horizon wrapper holding the previous solution for warm starts."""

    config: NmpcConfig = field(default_factory=NmpcConfig)
    model: DynamicsParams = field(default_factory=DynamicsParams)
    warm: bool = True
    previous: Optional[NmpcSolution] = None

    def update(self, x0, ref) -> NmpcSolution:
        sol = solve(x0, ref, self.previous if self.warm else None, self.config, self.model)
        self.previous = sol
        return sol
