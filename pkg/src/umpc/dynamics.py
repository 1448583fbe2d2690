"""Unicycle kinematics, RK4 discretization and the velocity smoother."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_DIM = 5
INPUT_DIM = 2


@dataclass(frozen=True)
class RobotState:
    """x = (x, y, phi, v, omega). phi accumulates and is not normalized."""

    x: float
    y: float
    phi: float
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.v, self.omega])

    @staticmethod
    def from_array(a) -> "RobotState":
        return RobotState(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(a[4]))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ControlInput:
    """u = (a, alpha): translational and rotational acceleration."""

    a: float
    alpha: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.alpha])


def unicycle_derivative(state: RobotState, u: ControlInput) -> np.ndarray:
    """xdot = (cos(phi) v, sin(phi) v, omega, a, alpha)."""
    return np.array(
        [math.cos(state.phi) * state.v, math.sin(state.phi) * state.v, state.omega, u.a, u.alpha]
    )


def _f(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.array([math.cos(x[2]) * x[3], math.sin(x[2]) * x[3], x[4], u[0], u[1]])


def _df_dx(x: np.ndarray) -> np.ndarray:
    j = np.zeros((5, 5))
    c, s = math.cos(x[2]), math.sin(x[2])
    j[0, 2] = -s * x[3]
    j[0, 3] = c
    j[1, 2] = c * x[3]
    j[1, 3] = s
    j[2, 4] = 1.0
    return j


_DF_DU = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def rk4_step_array(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Classical RK4 step with the input held constant (zero-order hold)."""
    k1 = _f(x, u)
    k2 = _f(x + 0.5 * dt * k1, u)
    k3 = _f(x + 0.5 * dt * k2, u)
    k4 = _f(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _f_batch(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
    out[:, 0] = c * x[:, 3]
    out[:, 1] = s * x[:, 3]
    out[:, 2] = x[:, 4]
    out[:, 3] = u[:, 0]
    out[:, 4] = u[:, 1]
    return out


def _df_dx_batch(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    j = np.zeros((n, 5, 5))
    c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
    j[:, 0, 2] = -s * x[:, 3]
    j[:, 0, 3] = c
    j[:, 1, 2] = c * x[:, 3]
    j[:, 1, 3] = s
    j[:, 2, 4] = 1.0
    return j


def rk4_step_batch(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Classical RK4 step applied to a batch of independent states.

    x has shape (n, 5), u has shape (n, 2); rows are integrated
    independently (as in a multiple-shooting transcription).
    """
    k1 = _f_batch(x, u)
    k2 = _f_batch(x + 0.5 * dt * k1, u)
    k3 = _f_batch(x + 0.5 * dt * k2, u)
    k4 = _f_batch(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_jacobians_batch(x: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Batched analytic Jacobians of rk4_step_batch: ((n,5,5), (n,5,2))."""
    n = x.shape[0]
    k1 = _f_batch(x, u)
    x2 = x + 0.5 * dt * k1
    k2 = _f_batch(x2, u)
    x3 = x + 0.5 * dt * k2
    k3 = _f_batch(x3, u)
    x4 = x + dt * k3
    eye = np.broadcast_to(np.eye(5), (n, 5, 5))

    a1 = _df_dx_batch(x)
    dk1_dx = a1
    a2 = _df_dx_batch(x2)
    dk2_dx = a2 @ (eye + 0.5 * dt * dk1_dx)
    a3 = _df_dx_batch(x3)
    dk3_dx = a3 @ (eye + 0.5 * dt * dk2_dx)
    a4 = _df_dx_batch(x4)
    dk4_dx = a4 @ (eye + dt * dk3_dx)
    jx = eye + (dt / 6.0) * (dk1_dx + 2.0 * dk2_dx + 2.0 * dk3_dx + dk4_dx)

    b = np.broadcast_to(_DF_DU, (n, 5, 2))
    dk1_du = b
    dk2_du = b + a2 @ (0.5 * dt * dk1_du)
    dk3_du = b + a3 @ (0.5 * dt * dk2_du)
    dk4_du = b + a4 @ (dt * dk3_du)
    ju = (dt / 6.0) * (dk1_du + 2.0 * dk2_du + 2.0 * dk3_du + dk4_du)
    return jx, ju


def rk4_step(state: RobotState, u: ControlInput, dt: float) -> RobotState:
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return RobotState.from_array(rk4_step_array(state.as_array(), u.as_array(), dt))


def rk4_jacobians(x: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians (d x_next/d x, d x_next/d u) of rk4_step_array."""
    k1 = _f(x, u)
    x2 = x + 0.5 * dt * k1
    k2 = _f(x2, u)
    x3 = x + 0.5 * dt * k2
    k3 = _f(x3, u)
    x4 = x + dt * k3
    eye = np.eye(5)

    a1 = _df_dx(x)
    dk1_dx = a1
    a2 = _df_dx(x2)
    dk2_dx = a2 @ (eye + 0.5 * dt * dk1_dx)
    a3 = _df_dx(x3)
    dk3_dx = a3 @ (eye + 0.5 * dt * dk2_dx)
    a4 = _df_dx(x4)
    dk4_dx = a4 @ (eye + dt * dk3_dx)
    jx = eye + (dt / 6.0) * (dk1_dx + 2.0 * dk2_dx + 2.0 * dk3_dx + dk4_dx)

    dk1_du = _DF_DU
    dk2_du = _DF_DU + a2 @ (0.5 * dt * dk1_du)
    dk3_du = _DF_DU + a3 @ (0.5 * dt * dk2_du)
    dk4_du = _DF_DU + a4 @ (dt * dk3_du)
    ju = (dt / 6.0) * (dk1_du + 2.0 * dk2_du + 2.0 * dk3_du + dk4_du)
    return jx, ju


def smooth_velocity(
    prev_cmd: tuple[float, float],
    new_cmd: tuple[float, float],
    dt_mpc: float,
    dt_ctrl: float,
) -> list[tuple[float, float]]:
    """Linear ramp of (v, omega) commands from prev_cmd to new_cmd.

    Emits dt_mpc/dt_ctrl commands at the control rate; the final one
    equals new_cmd exactly.
    """
    if dt_ctrl <= 0.0 or dt_ctrl > dt_mpc:
        raise ValueError("need 0 < dt_ctrl <= dt_mpc")
    ratio = dt_mpc / dt_ctrl
    n = round(ratio)
    if abs(ratio - n) > 1e-9:
        raise ValueError(f"dt_mpc must be an integer multiple of dt_ctrl (ratio {ratio})")
    out = []
    for i in range(1, n + 1):
        frac = i / n
        out.append(
            (
                prev_cmd[0] + frac * (new_cmd[0] - prev_cmd[0]),
                prev_cmd[1] + frac * (new_cmd[1] - prev_cmd[1]),
            )
        )
    out[-1] = (new_cmd[0], new_cmd[1])
    return out
