"""Obstacle motion forecasting.

A VAR(2) model on Cartesian velocities is fitted by ordinary least
squares, forecast over the planning horizon with textbook companion-form
mean/MSE recursions, and the velocity moments are propagated to position
mean and covariance with trapezoidal integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Covariance2

MIN_FIT_SAMPLES = 8
FALLBACK_VARIANCE_FLOOR = 1e-6  # (m/s)^2


class InsufficientDataError(ValueError):
    """Too few velocity samples for a determined VAR(2) fit."""


class RankDeficiencyError(ValueError):
    """Regressor matrix numerically singular; fit would be meaningless."""


@dataclass(frozen=True)
class Var2Model:
    """v_t = c + A1 v_{t-1} + A2 v_{t-2} + u_t with u_t ~ N(0, sigma_u)."""

    a1: np.ndarray = field(repr=False)
    a2: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    sigma_u: Covariance2
    n_obs: int


@dataclass(frozen=True)
class VelocityForecast:
    """Velocity moments per horizon step, plus the step-0 seed velocity.

    mu[i], sigma[i] are the mean and covariance at step i+1; v_current is
    the last observed velocity, treated as exactly known (zero covariance).
    """

    mu: list[np.ndarray]
    sigma: list[Covariance2]
    v_current: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.mu)


@dataclass(frozen=True)
class ObstacleForecast:
    """Position moments of one obstacle over the horizon."""

    obstacle_id: str
    radius: float
    mu: list[np.ndarray]
    sigma: list[Covariance2]

    def __len__(self) -> int:
        return len(self.mu)


def fit_var2(velocity_history: np.ndarray, dt: float) -> Var2Model:
    """OLS fit of a VAR(2) with intercept on a uniformly sampled series.

    The innovation covariance uses the standard degrees-of-freedom
    correction: residual outer products divided by T - 2 - 5.
    """
    v = np.asarray(velocity_history, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise ValueError("velocity_history must have shape (T, 2)")
    t_total = v.shape[0]
    if t_total < MIN_FIT_SAMPLES:
        raise InsufficientDataError(f"need >= {MIN_FIT_SAMPLES} samples, got {t_total}")

    y = v[2:]
    x = np.column_stack([np.ones(t_total - 2), v[1:-1], v[:-2]])
    if np.linalg.cond(x) > 1e12:
        raise RankDeficiencyError("VAR(2) regressor matrix is numerically singular")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    dof = t_total - 2 - 5
    cov_u = resid.T @ resid / dof
    return Var2Model(
        a1=beta[1:3].T.copy(),
        a2=beta[3:5].T.copy(),
        c=beta[0].copy(),
        sigma_u=Covariance2.from_matrix(cov_u),
        n_obs=t_total,
    )


def constant_velocity_model(v_last: np.ndarray) -> Var2Model:
    """Degenerate fallback when the VAR fit is impossible (e.g. stationary obstacle)."""
    return Var2Model(
        a1=np.zeros((2, 2)),
        a2=np.zeros((2, 2)),
        c=np.asarray(v_last, dtype=float).copy(),
        sigma_u=Covariance2.isotropic(FALLBACK_VARIANCE_FLOOR),
        n_obs=0,
    )


def companion_spectral_radius(model: Var2Model) -> float:
    """Largest eigenvalue magnitude of the VAR(2) companion matrix."""
    companion = np.zeros((4, 4))
    companion[:2, :2] = model.a1
    companion[:2, 2:] = model.a2
    companion[2:, :2] = np.eye(2)
    return float(np.max(np.abs(np.linalg.eigvals(companion))))


def forecast_velocity(model: Var2Model, last_two: np.ndarray, horizon: int) -> VelocityForecast:
    """Mean and MSE of the VAR(2) forecast for steps 1..horizon.

    MSE via the companion form: Sigma_h = sum_{j<h} Phi_j Sigma_u Phi_j^T
    with Phi_j the top-left 2x2 block of the j-th companion-matrix power.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    last_two = np.asarray(last_two, dtype=float)
    v_prev2, v_prev1 = last_two[-2], last_two[-1]

    mus = []
    v1, v2 = v_prev1, v_prev2
    for _ in range(horizon):
        v_next = model.c + model.a1 @ v1 + model.a2 @ v2
        mus.append(v_next)
        v1, v2 = v_next, v1

    companion = np.zeros((4, 4))
    companion[:2, :2] = model.a1
    companion[:2, 2:] = model.a2
    companion[2:, :2] = np.eye(2)
    sig_u = model.sigma_u.as_matrix()
    sigmas = []
    power = np.eye(4)
    acc = np.zeros((2, 2))
    for _ in range(horizon):
        phi = power[:2, :2]
        acc = acc + phi @ sig_u @ phi.T
        sigmas.append(Covariance2.from_matrix(acc))
        power = companion @ power

    return VelocityForecast(mu=mus, sigma=sigmas, v_current=v_prev1.copy())


def propagate_position(
    mu0: np.ndarray,
    sigma0: Covariance2,
    vf: VelocityForecast,
    dt: float,
    obstacle_id: str = "",
    radius: float = 0.0,
) -> ObstacleForecast:
    """Position moments from velocity moments by trapezoidal integration.

    mu_{k+i} = mu_{k+i-1} + dt (mu_v,k+i + mu_v,k+i-1)/2 and
    Sigma_{k+i} = Sigma_{k+i-1} + dt^2/4 (Sigma_v,k+i + Sigma_v,k+i-1),
    neglecting cross-covariances between summands. The step-0 velocity is
    vf.v_current with zero covariance.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mu_prev = np.asarray(mu0, dtype=float)
    sig_prev = sigma0.as_matrix()
    mu_v_prev = vf.v_current
    sig_v_prev = np.zeros((2, 2))
    mus, sigmas = [], []
    for mu_v, sig_v_c in zip(vf.mu, vf.sigma):
        sig_v = sig_v_c.as_matrix()
        mu_next = mu_prev + dt * 0.5 * (mu_v + mu_v_prev)
        sig_next = sig_prev + (dt * dt / 4.0) * (sig_v + sig_v_prev)
        mus.append(mu_next)
        sigmas.append(Covariance2.from_matrix(sig_next))
        mu_prev, sig_prev = mu_next, sig_next
        mu_v_prev, sig_v_prev = mu_v, sig_v
    return ObstacleForecast(obstacle_id=obstacle_id, radius=radius, mu=mus, sigma=sigmas)


def forecast_obstacle(
    position_history: np.ndarray,
    dt: float,
    horizon: int,
    obstacle_id: str = "",
    radius: float = 0.0,
    window: int | None = None,
) -> ObstacleForecast:
    """End-to-end forecast from a position history.

    Velocities are first differences over dt; the VAR(2) fit falls back
    to a constant-velocity model when data are insufficient or the
    regressors are rank deficient.
    """
    pos = np.asarray(position_history, dtype=float)
    if window is not None and pos.shape[0] > window:
        pos = pos[-window:]
    if pos.shape[0] < 2:
        vel = np.zeros((1, 2))
    else:
        vel = np.diff(pos, axis=0) / dt
    try:
        model = fit_var2(vel, dt)
        # explosive fits on short transient histories produce useless
        # horizon-length forecasts; fall back to constant velocity
        if companion_spectral_radius(model) > 1.05:
            model = constant_velocity_model(vel[-1])
    except (InsufficientDataError, RankDeficiencyError):
        model = constant_velocity_model(vel[-1])
    last_two = vel[-2:] if vel.shape[0] >= 2 else np.vstack([vel[-1], vel[-1]])
    vf = forecast_velocity(model, last_two, horizon)
    return propagate_position(
        pos[-1], Covariance2.zero(), vf, dt, obstacle_id=obstacle_id, radius=radius
    )
