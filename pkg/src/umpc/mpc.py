"""Receding-horizon trajectory planner.

Transcribes the tracking problem with probabilistic ellipse keep-out
constraints into a dense NLP over (U, X, s) and solves it with an SQP
method (scipy SLSQP) under a wall-clock cap, warm-started from the
previous cycle.
"""

from __future__ import annotations

import enum
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .dynamics import (
    ControlInput,
    RobotState,
    rk4_jacobians_batch,
    rk4_step_array,
    rk4_step_batch,
)
from .forecast import ObstacleForecast
from .geometry import ChanceLevel, eig_sym_2x2

S_REF_95 = math.sqrt(5.991)


@dataclass(frozen=True)
class MpcConfig:
    n_horizon: int = 15
    dt: float = 0.5
    w_p: float = 100.0
    w_v: float = 10.0
    w_a: float = 1e4
    w_alpha: float = 500.0
    v_ref: float = 0.5
    s_ref: float = S_REF_95
    v_max: float = 0.7
    omega_max: float = 0.3
    a_max: float = 0.7
    alpha_max: float = 0.1
    r_robot: float = 0.75
    solve_time_cap: float = 0.45

    def __post_init__(self):
        if self.n_horizon < 1:
            raise ValueError("n_horizon must be >= 1")
        for name in ("dt", "w_p", "w_v", "w_a", "w_alpha", "v_ref", "s_ref", "v_max",
                     "omega_max", "a_max", "alpha_max", "r_robot", "solve_time_cap"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    TIME_CAP = "time_cap"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class MpcSolution:
    states: list[RobotState]
    inputs: list[ControlInput]
    s_opt: float
    status: SolveStatus
    objective: float
    iterations: int
    wall_time: float
    feasible: bool

    @property
    def usable(self) -> bool:
        return self.status is SolveStatus.OPTIMAL or self.feasible


class Nlp:
    """Dense transcription of the N-step planning problem.

    Decision vector z = (u_0..u_{N-1}, x_1..x_N, s): 2N + 5N + 1 entries.
    Equalities enforce the RK4 dynamics; one inequality per obstacle and
    step keeps the position outside the enlarged forecast ellipse, with
    the chance threshold s entering the axis lengths.
    """

    def __init__(self, config: MpcConfig, x0: RobotState, refs: np.ndarray,
                 obstacles: list[ObstacleForecast], chance: ChanceLevel):
        n = config.n_horizon
        refs = np.asarray(refs, dtype=float)
        if refs.shape != (n, 5):
            raise ValueError(f"reference window must have shape ({n}, 5)")
        for ob in obstacles:
            if len(ob) != n:
                raise ValueError(
                    f"obstacle {ob.obstacle_id!r} forecast has {len(ob)} steps, expected {n}"
                )
        self.config = config
        self.x0 = x0.as_array()
        self.refs = refs
        self.chance = chance
        self.n = n
        self.n_var = 7 * n + 1
        self.n_eq = 5 * n
        self.q_diag = np.array([config.w_p, config.w_p, 0.0, config.w_v, 0.0])
        self.p_diag = np.array([config.w_a, config.w_alpha])

        # one keep-out ellipse per (obstacle, step), stacked into arrays
        steps, mus, rots, sqrt_lams, enls = [], [], [], [], []
        for ob in obstacles:
            for i in range(n):
                eig = eig_sym_2x2(ob.sigma[i])
                steps.append(i + 1)
                mus.append(np.asarray(ob.mu[i], dtype=float))
                rots.append(eig.rotation())
                sqrt_lams.append(
                    np.sqrt([max(eig.lambda1, 0.0), max(eig.lambda2, 0.0)]))
                enls.append(config.r_robot + ob.radius)
        self.n_ineq = len(steps)
        self._ell_step = np.asarray(steps, dtype=int)
        self._ell_mu = np.asarray(mus).reshape(self.n_ineq, 2)
        self._ell_rot = np.asarray(rots).reshape(self.n_ineq, 2, 2)
        self._ell_sqrt_lam = np.asarray(sqrt_lams).reshape(self.n_ineq, 2)
        self._ell_enl = np.asarray(enls)
        # column of x_{step} in z where the (x, y) pair of each ellipse lives
        self._ell_col = 2 * n + 5 * (self._ell_step - 1)

    # -- decision-vector layout ------------------------------------------
    def u_slice(self, i: int) -> slice:
        return slice(2 * i, 2 * i + 2)

    def x_slice(self, i: int) -> slice:
        """State x_{k+i}, i = 1..N."""
        return slice(2 * self.n + 5 * (i - 1), 2 * self.n + 5 * i)

    @property
    def s_index(self) -> int:
        return 7 * self.n

    def state_at(self, z: np.ndarray, i: int) -> np.ndarray:
        return self.x0 if i == 0 else z[self.x_slice(i)]

    def _states(self, z: np.ndarray) -> np.ndarray:
        """All decision states x_1..x_N as an (N, 5) view."""
        return z[2 * self.n:7 * self.n].reshape(self.n, 5)

    def _inputs(self, z: np.ndarray) -> np.ndarray:
        return z[:2 * self.n].reshape(self.n, 2)

    # -- objective --------------------------------------------------------
    def cost(self, z: np.ndarray) -> float:
        dx = self._states(z) - self.refs
        u = self._inputs(z)
        return float(
            (z[self.s_index] - self.config.s_ref) ** 2
            + np.sum(dx * dx * self.q_diag)
            + np.sum(u * u * self.p_diag)
        )

    def cost_grad(self, z: np.ndarray) -> np.ndarray:
        g = np.zeros(self.n_var)
        g[self.s_index] = 2.0 * (z[self.s_index] - self.config.s_ref)
        g[2 * self.n:7 * self.n] = (2.0 * self.q_diag * (self._states(z) - self.refs)).ravel()
        g[:2 * self.n] = (2.0 * self.p_diag * self._inputs(z)).ravel()
        return g

    # -- dynamics equalities ----------------------------------------------
    def _shooting_nodes(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Shooting start states (x_0..x_{N-1}) and inputs, both (N, .)."""
        xz = self._states(z)
        x_prev = np.vstack([self.x0[None, :], xz[:-1]])
        return x_prev, self._inputs(z)

    def eq_constraints(self, z: np.ndarray) -> np.ndarray:
        x_prev, u = self._shooting_nodes(z)
        return (self._states(z) - rk4_step_batch(x_prev, u, self.config.dt)).ravel()

    def eq_jacobian(self, z: np.ndarray) -> np.ndarray:
        x_prev, u = self._shooting_nodes(z)
        jx, ju = rk4_jacobians_batch(x_prev, u, self.config.dt)
        jac = np.zeros((self.n_eq, self.n_var))
        eye5 = np.eye(5)
        for i in range(self.n):
            rows = slice(5 * i, 5 * i + 5)
            jac[rows, self.x_slice(i + 1)] = eye5
            jac[rows, self.u_slice(i)] = -ju[i]
            if i >= 1:
                jac[rows, self.x_slice(i)] = -jx[i]
        return jac

    # -- ellipse inequalities ---------------------------------------------
    def _ellipse_terms(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Eigenframe offsets w (m, 2) and semi-axes (m, 2) at s = z[-1]."""
        p = self._states(z)[self._ell_step - 1, :2]
        d = p - self._ell_mu
        w = np.einsum("mji,mj->mi", self._ell_rot, d)
        axes = z[self.s_index] * self._ell_sqrt_lam + self._ell_enl[:, None]
        return w, axes

    def ineq_constraints(self, z: np.ndarray) -> np.ndarray:
        w, axes = self._ellipse_terms(z)
        return np.sum((w / axes) ** 2, axis=1) - 1.0

    def ineq_jacobian(self, z: np.ndarray) -> np.ndarray:
        w, axes = self._ellipse_terms(z)
        jac = np.zeros((self.n_ineq, self.n_var))
        dg_dp = 2.0 * np.einsum("mij,mj->mi", self._ell_rot, w / (axes * axes))
        rows = np.arange(self.n_ineq)
        jac[rows, self._ell_col] = dg_dp[:, 0]
        jac[rows, self._ell_col + 1] = dg_dp[:, 1]
        jac[:, self.s_index] = np.sum(-2.0 * w * w * self._ell_sqrt_lam / axes**3, axis=1)
        return jac

    # -- bounds -----------------------------------------------------------
    def bounds(self) -> list[tuple[float | None, float | None]]:
        c = self.config
        b: list[tuple[float | None, float | None]] = []
        for _ in range(self.n):
            b.append((-c.a_max, c.a_max))
            b.append((-c.alpha_max, c.alpha_max))
        for _ in range(self.n):
            b.extend([(None, None), (None, None), (None, None)])
            b.append((-c.v_max, c.v_max))
            b.append((-c.omega_max, c.omega_max))
        b.append((0.0, None))
        return b

    def n_box_scalar_bounds(self) -> tuple[int, int]:
        """(velocity-box, input-box) scalar bound count, lower and upper each."""
        return (4 * self.n, 4 * self.n)

    # -- initial guesses ---------------------------------------------------
    def cold_start(self) -> np.ndarray:
        z = np.zeros(self.n_var)
        x = self.x0
        for i in range(1, self.n + 1):
            x = rk4_step_array(x, np.zeros(2), self.config.dt)
            z[self.x_slice(i)] = x
        z[self.s_index] = self.config.s_ref
        return z

    def braking_start(self) -> np.ndarray:
        """Initial guess that decelerates to rest within the input bounds.

        Feasible w.r.t. the ellipse constraints whenever stopping short of
        the obstacles is possible; the chance threshold is dropped to 0 if
        that is what makes the stopped trajectory feasible.
        """
        c = self.config
        z = np.zeros(self.n_var)
        x = self.x0.copy()
        for i in range(1, self.n + 1):
            a = -np.clip(x[3] / c.dt, -c.a_max, c.a_max)
            alpha = -np.clip(x[4] / c.dt, -c.alpha_max, c.alpha_max)
            u = np.array([a, alpha])
            z[self.u_slice(i - 1)] = u
            x = rk4_step_array(x, u, c.dt)
            z[self.x_slice(i)] = x
        z[self.s_index] = c.s_ref
        if self.n_ineq and np.min(self.ineq_constraints(z)) < 0.0:
            z_zero = z.copy()
            z_zero[self.s_index] = 0.0
            if np.min(self.ineq_constraints(z_zero)) >= 0.0:
                return z_zero
        return z

    def pack(self, states: list[RobotState], inputs: list[ControlInput], s: float) -> np.ndarray:
        z = np.empty(self.n_var)
        for i, u in enumerate(inputs):
            z[self.u_slice(i)] = u.as_array()
        for i, x in enumerate(states, start=1):
            z[self.x_slice(i)] = x.as_array()
        z[self.s_index] = s
        return z

    def feasibility(self, z: np.ndarray) -> tuple[float, float]:
        """(max equality residual, max inequality violation), both >= 0."""
        eq = float(np.max(np.abs(self.eq_constraints(z)))) if self.n_eq else 0.0
        if self.n_ineq:
            ineq = float(max(0.0, -np.min(self.ineq_constraints(z))))
        else:
            ineq = 0.0
        return eq, ineq


def build_nlp(config: MpcConfig, x0: RobotState, refs: np.ndarray,
              obstacles: list[ObstacleForecast], chance: ChanceLevel) -> Nlp:
    return Nlp(config, x0, refs, obstacles, chance)


FEAS_TOL = 1e-6


class _TimeCapExceeded(Exception):
    pass


def _run_slsqp(nlp: Nlp, z0: np.ndarray, deadline: float, max_iter: int, best: dict):
    """One SLSQP attempt with deadline enforcement at iteration boundaries."""

    def track(zk: np.ndarray) -> None:
        eq, ineq = nlp.feasibility(zk)
        if eq <= FEAS_TOL and ineq <= FEAS_TOL:
            c = nlp.cost(zk)
            if c < best["cost"]:
                best["z"] = zk.copy()
                best["cost"] = c

    def callback(zk: np.ndarray) -> None:
        track(zk)
        if time.monotonic() > deadline:
            raise _TimeCapExceeded

    track(z0)  # a feasible start must survive as the fallback incumbent
    constraints = [{"type": "eq", "fun": nlp.eq_constraints, "jac": nlp.eq_jacobian}]
    if nlp.n_ineq:
        constraints.append({"type": "ineq", "fun": nlp.ineq_constraints, "jac": nlp.ineq_jacobian})

    try:
        with warnings.catch_warnings():
            # SLSQP clips trial points to the bounds itself; the warning is noise
            warnings.filterwarnings("ignore", message="Values in x were outside bounds",
                                    category=RuntimeWarning)
            res = minimize(
                nlp.cost,
                z0,
                jac=nlp.cost_grad,
                bounds=nlp.bounds(),
                constraints=constraints,
                method="SLSQP",
                options={"maxiter": max_iter, "ftol": 1e-9},
                callback=callback,
            )
            track(res.x)
        return res.x, int(res.nit), bool(res.success), res.status == 9, False
    except _TimeCapExceeded:
        z = best["z"] if best["z"] is not None else z0
        return z, max_iter, False, False, True


def solve(nlp: Nlp, warm_start: MpcSolution | None = None,
          max_iter: int = 55, retry_iter: int = 20) -> MpcSolution:
    """Solve the NLP with SLSQP, tracking the best feasible iterate.

    The first attempt starts from the warm start (or a constant-velocity
    rollout); if it ends infeasible, a second attempt starts from the
    best feasible iterate seen, else from a dynamically feasible braking
    trajectory, which conditions the SQP line search much better than a
    colliding rollout.

    Control flow branches only on feasibility and the fixed iteration
    budgets, so identical inputs give identical outputs. The wall-clock
    deadline is an emergency stop sized so the budgets normally finish
    well inside it; if it does fire, the best feasible iterate seen so
    far is returned with status TIME_CAP.
    """
    if warm_start is not None:
        z0 = nlp.pack(warm_start.states, warm_start.inputs, warm_start.s_opt)
    else:
        z0 = nlp.cold_start()

    t0 = time.monotonic()
    best: dict = {"z": None, "cost": math.inf}
    # margin keeps the reported wall time under the cap even though the
    # deadline is only checked at iteration boundaries
    budget = max(nlp.config.solve_time_cap - 0.03, 0.5 * nlp.config.solve_time_cap)
    deadline = t0 + budget
    z, iterations, success, hit_max_iter, timed_out = _run_slsqp(
        nlp, z0, deadline, max_iter, best
    )
    eq_res, ineq_res = nlp.feasibility(z)
    feasible = eq_res <= FEAS_TOL and ineq_res <= FEAS_TOL

    if not feasible and not timed_out:
        if hit_max_iter:
            # ran out of iterations mid-descent: continue from where it was
            z0b = z.copy()
        else:
            # stalled (e.g. bad line-search direction from a colliding
            # start): restart from the best feasible iterate if any, else
            # from a dynamically feasible braking trajectory
            z0b = best["z"].copy() if best["z"] is not None else nlp.braking_start()
        z2, it2, success, hit_max_iter, timed_out = _run_slsqp(
            nlp, z0b, deadline, retry_iter, best
        )
        iterations += it2
        z = z2
        eq_res, ineq_res = nlp.feasibility(z)
        feasible = eq_res <= FEAS_TOL and ineq_res <= FEAS_TOL

    if not feasible and best["z"] is not None:
        z = best["z"]
        feasible = True

    if success and feasible:
        status = SolveStatus.OPTIMAL
    elif timed_out:
        status = SolveStatus.TIME_CAP
    elif feasible:
        status = SolveStatus.MAX_ITER
    else:
        status = SolveStatus.INFEASIBLE

    states = [RobotState.from_array(z[nlp.x_slice(i)]) for i in range(1, nlp.n + 1)]
    inputs = [ControlInput(*z[nlp.u_slice(i)]) for i in range(nlp.n)]
    return MpcSolution(
        states=states,
        inputs=inputs,
        s_opt=float(z[nlp.s_index]),
        status=status,
        objective=nlp.cost(z),
        iterations=iterations,
        wall_time=time.monotonic() - t0,
        feasible=feasible,
    )


def extract_reference_window(path: np.ndarray, x_current: RobotState,
                             config: MpcConfig) -> np.ndarray:
    """Sample N reference states along the waypoint polyline.

    The current position is projected onto the path; references sit at
    arc lengths v_ref*dt, 2*v_ref*dt, ... beyond the projection, clamped
    to the final waypoint. Each row is (x_r, y_r, 0, v_ref, 0).
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[0] < 1 or path.shape[1] != 2:
        raise ValueError("path must be a non-empty (M, 2) waypoint array")
    p = np.array([x_current.x, x_current.y])

    if path.shape[0] == 1:
        arc0 = 0.0
        cum = np.array([0.0])
    else:
        seg = np.diff(path, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        best_d2, arc0 = math.inf, 0.0
        for i in range(len(seg)):
            if seg_len[i] < 1e-12:
                t = 0.0
            else:
                t = float(np.clip((p - path[i]) @ seg[i] / seg_len[i] ** 2, 0.0, 1.0))
            q = path[i] + t * seg[i]
            d2 = float(np.sum((p - q) ** 2))
            if d2 < best_d2:
                best_d2 = d2
                arc0 = cum[i] + t * seg_len[i]

    total = float(cum[-1])
    spacing = config.v_ref * config.dt
    refs = np.zeros((config.n_horizon, 5))
    refs[:, 3] = config.v_ref
    for i in range(1, config.n_horizon + 1):
        s_i = min(arc0 + i * spacing, total)
        refs[i - 1, :2] = _point_at_arc(path, cum, s_i)
    return refs


def _point_at_arc(path: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    if path.shape[0] == 1 or s <= 0.0:
        return path[0]
    if s >= cum[-1]:
        return path[-1]
    j = int(np.searchsorted(cum, s, side="right") - 1)
    j = min(j, path.shape[0] - 2)
    seg = path[j + 1] - path[j]
    length = cum[j + 1] - cum[j]
    t = (s - cum[j]) / length if length > 0 else 0.0
    return path[j] + t * seg


class Planner:
    """Stateful receding-horizon planner for one robot.

    Warm-starts each solve from the previous plan shifted by one step.
    On a failed solve the previous plan is reused shifted; after two
    consecutive failures a braking ramp toward zero is commanded.
    """

    def __init__(self, config: MpcConfig, chance: ChanceLevel,
                 disable_obstacle_constraints: bool = False):
        self.config = config
        self.chance = chance
        self.disable_obstacle_constraints = disable_obstacle_constraints
        self.prev_solution: MpcSolution | None = None
        self.fail_count = 0
        self.last_cmd = (0.0, 0.0)

    def _prune(self, x0: RobotState, obstacles: list[ObstacleForecast]) -> list[ObstacleForecast]:
        reach = self.config.n_horizon * self.config.v_max * self.config.dt
        kept = []
        for ob in obstacles:
            for mu, sig in zip(ob.mu, ob.sigma):
                eig = eig_sym_2x2(sig)
                axis = self.chance.s * math.sqrt(max(eig.lambda1, 0.0)) \
                    + self.config.r_robot + ob.radius
                d = math.hypot(mu[0] - x0.x, mu[1] - x0.y)
                if d <= reach + axis:
                    kept.append(ob)
                    break
        return kept

    def _shifted_warm_start(self) -> MpcSolution | None:
        prev = self.prev_solution
        if prev is None:
            return None
        states = prev.states[1:] + [prev.states[-1]]
        inputs = prev.inputs[1:] + [prev.inputs[-1]]
        return replace(prev, states=states, inputs=inputs)

    def step(self, x_measured: RobotState, refs: np.ndarray,
             obstacles: list[ObstacleForecast]) -> tuple[tuple[float, float], MpcSolution]:
        if self.disable_obstacle_constraints:
            obstacles = []
        else:
            obstacles = self._prune(x_measured, obstacles)
        nlp = build_nlp(self.config, x_measured, refs, obstacles, self.chance)
        solution = solve(nlp, warm_start=self._shifted_warm_start())

        if solution.usable:
            self.fail_count = 0
            self.prev_solution = solution
            cmd = (solution.states[0].v, solution.states[0].omega)
        else:
            self.fail_count += 1
            fallback = self._shifted_warm_start()
            if self.fail_count < 2 and fallback is not None:
                self.prev_solution = fallback
                cmd = (fallback.states[0].v, fallback.states[0].omega)
            else:
                dv = self.config.a_max * self.config.dt
                dw = self.config.alpha_max * self.config.dt
                v, w = self.last_cmd
                cmd = (
                    math.copysign(max(abs(v) - dv, 0.0), v),
                    math.copysign(max(abs(w) - dw, 0.0), w),
                )
        self.last_cmd = cmd
        return cmd, solution
