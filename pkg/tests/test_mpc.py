import math

import numpy as np
import pytest

from umpc.dynamics import ControlInput, RobotState, rk4_step
from umpc.forecast import ObstacleForecast
from umpc.geometry import (
    ChanceLevel,
    Covariance2,
    build_forecast_ellipse,
    chi2_threshold,
    constraint_value,
)
from umpc.mpc import (
    FEAS_TOL,
    MpcConfig,
    Planner,
    SolveStatus,
    build_nlp,
    extract_reference_window,
    solve,
)

CONFIG = MpcConfig()
CHANCE = chi2_threshold(0.95)


def straight_refs(x0: RobotState, config=CONFIG) -> np.ndarray:
    path = np.array([[x0.x, x0.y], [x0.x + 20.0, x0.y]])
    return extract_reference_window(path, x0, config)


def static_obstacle(x, y, n=CONFIG.n_horizon, var=0.01, radius=0.75) -> ObstacleForecast:
    return ObstacleForecast(
        obstacle_id="ob",
        radius=radius,
        mu=[np.array([x, y])] * n,
        sigma=[Covariance2.isotropic(var)] * n,
    )


class TestNlpStructure:
    def test_dimensions_single_obstacle(self):
        x0 = RobotState(0, 0, 0, 0, 0)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [static_obstacle(5, 0)], CHANCE)
        assert nlp.n_var == 106
        assert nlp.n_eq == 75
        assert nlp.n_ineq == 15
        assert nlp.n_box_scalar_bounds() == (60, 60)
        bounds = nlp.bounds()
        assert len(bounds) == 106
        assert bounds[-1] == (0.0, None)  # s >= 0

    def test_ineq_count_scales_with_obstacles(self):
        x0 = RobotState(0, 0, 0, 0, 0)
        obs = [static_obstacle(5, 0), static_obstacle(3, 2)]
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), obs, CHANCE)
        assert nlp.n_ineq == 30

    def test_rejects_wrong_horizon_forecast(self):
        x0 = RobotState(0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            build_nlp(CONFIG, x0, straight_refs(x0), [static_obstacle(5, 0, n=10)], CHANCE)

    def test_rejects_wrong_reference_shape(self):
        x0 = RobotState(0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            build_nlp(CONFIG, x0, np.zeros((10, 5)), [], CHANCE)

    def test_equalities_vanish_on_rolled_out_trajectory(self):
        x0 = RobotState(0.3, -0.2, 0.4, 0.2, 0.05)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [], CHANCE)
        z = nlp.cold_start()
        assert np.max(np.abs(nlp.eq_constraints(z))) < 1e-12


class TestNlpDerivatives:
    def rand_z(self, nlp, rng):
        z = rng.normal(size=nlp.n_var)
        z[nlp.s_index] = abs(z[nlp.s_index]) + 0.5
        return z

    def test_cost_gradient(self):
        rng = np.random.default_rng(0)
        x0 = RobotState(0, 0, 0, 0.2, 0)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [static_obstacle(4, 0)], CHANCE)
        for _ in range(20):
            z = self.rand_z(nlp, rng)
            g = nlp.cost_grad(z)
            h = 1e-6
            for j in rng.choice(nlp.n_var, size=12, replace=False):
                e = np.zeros(nlp.n_var)
                e[j] = h
                fd = (nlp.cost(z + e) - nlp.cost(z - e)) / (2 * h)
                assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-4)

    def test_eq_jacobian(self):
        rng = np.random.default_rng(1)
        x0 = RobotState(0.1, 0.2, 0.3, 0.2, -0.1)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [], CHANCE)
        z = self.rand_z(nlp, rng)
        jac = nlp.eq_jacobian(z)
        h = 1e-6
        for j in rng.choice(nlp.n_var, size=25, replace=False):
            e = np.zeros(nlp.n_var)
            e[j] = h
            fd = (nlp.eq_constraints(z + e) - nlp.eq_constraints(z - e)) / (2 * h)
            assert np.allclose(jac[:, j], fd, rtol=1e-5, atol=1e-6)

    def test_ineq_jacobian_including_s(self):
        rng = np.random.default_rng(2)
        x0 = RobotState(0, 0, 0, 0.2, 0)
        obs = static_obstacle(2, 0.5, var=0.05)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [obs], CHANCE)
        for _ in range(10):
            z = self.rand_z(nlp, rng)
            jac = nlp.ineq_jacobian(z)
            h = 1e-6
            for j in list(rng.choice(nlp.n_var - 1, size=10, replace=False)) + [nlp.s_index]:
                e = np.zeros(nlp.n_var)
                e[j] = h
                fd = (nlp.ineq_constraints(z + e) - nlp.ineq_constraints(z - e)) / (2 * h)
                assert np.allclose(jac[:, j], fd, rtol=1e-4, atol=1e-6)


class TestSolve:
    def test_stationary_at_goal_is_near_zero_cost(self):
        # robot at the end of its path with v_ref-tracked refs clamped to
        # the goal: optimum still pays for the residual v_ref tracking term
        x0 = RobotState(0, 0, 0, 0.0, 0.0)
        path = np.array([[-10.0, 0.0], [0.0, 0.0]])
        refs = extract_reference_window(path, x0, CONFIG)
        nlp = build_nlp(CONFIG, x0, refs, [], CHANCE)
        sol = solve(nlp)
        assert sol.status is SolveStatus.OPTIMAL
        assert sol.feasible
        assert sol.s_opt == pytest.approx(CONFIG.s_ref, abs=1e-6)
        assert all(abs(x.x) < 0.2 for x in sol.states)

    def test_unobstructed_tracking_moves_forward(self):
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [], CHANCE)
        sol = solve(nlp)
        assert sol.status is SolveStatus.OPTIMAL
        xs = [s.x for s in sol.states]
        assert all(b > a for a, b in zip(xs, xs[1:]))
        assert xs[-1] == pytest.approx(15 * 0.25, abs=0.15)
        assert sol.s_opt == pytest.approx(CONFIG.s_ref, abs=1e-6)

    def test_solution_respects_bounds(self):
        x0 = RobotState(0, 0, 0, 0.0, 0.0)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [static_obstacle(3, 0)], CHANCE)
        sol = solve(nlp)
        for s in sol.states:
            assert abs(s.v) <= CONFIG.v_max + 1e-9
            assert abs(s.omega) <= CONFIG.omega_max + 1e-9
        for u in sol.inputs:
            assert abs(u.a) <= CONFIG.a_max + 1e-9
            assert abs(u.alpha) <= CONFIG.alpha_max + 1e-9
        assert sol.s_opt >= -1e-12

    def test_static_obstacle_keeps_plan_outside_ellipses(self):
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        ob = static_obstacle(3, 0.2, var=0.02)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [ob], CHANCE)
        sol = solve(nlp)
        assert sol.feasible
        chance_opt = ChanceLevel(p=CHANCE.p, s=sol.s_opt)
        for i, state in enumerate(sol.states):
            ell = build_forecast_ellipse(ob.mu[i], ob.sigma[i], chance_opt,
                                         CONFIG.r_robot, ob.radius)
            assert constraint_value(ell, state.position) >= 1.0 - 1e-6

    def test_replay_feasibility_with_rk4(self):
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [static_obstacle(3, 0)], CHANCE)
        sol = solve(nlp)
        state = x0
        for planned, u in zip(sol.states, sol.inputs):
            state = rk4_step(state, u, CONFIG.dt)
            assert np.allclose(state.as_array(), planned.as_array(), atol=FEAS_TOL)

    def test_conflict_softens_s(self):
        # obstacle parked on the reference path: s must shrink below s_ref
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        ob = static_obstacle(2.0, 0.0, var=0.5)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [ob], CHANCE)
        sol = solve(nlp)
        assert sol.feasible
        assert sol.s_opt < CONFIG.s_ref - 1e-6

    def test_warm_start_not_worse_than_incumbent(self):
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        ob = static_obstacle(3, 0.4, var=0.02)
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [ob], CHANCE)
        incumbent = solve(nlp)
        assert incumbent.feasible
        z_inc = nlp.pack(incumbent.states, incumbent.inputs, incumbent.s_opt)
        resumed = solve(nlp, warm_start=incumbent)
        tol = 1e-6 * max(1.0, abs(nlp.cost(z_inc)))
        assert resumed.objective <= nlp.cost(z_inc) + tol

    def test_wall_time_under_cap(self):
        x0 = RobotState(-5, 0, 0, 0.0, 0.0)
        obs = [static_obstacle(-2.0 + i, 0.05 * i, var=0.3) for i in range(3)]
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), obs, CHANCE)
        sol = solve(nlp)
        assert sol.wall_time <= CONFIG.solve_time_cap

    def test_deterministic_given_identical_inputs(self):
        x0 = RobotState(0, 0, 0, 0.3, 0.0)
        ob = static_obstacle(3, 0.3, var=0.1)
        sols = []
        for _ in range(2):
            nlp = build_nlp(CONFIG, x0, straight_refs(x0), [ob], CHANCE)
            sols.append(solve(nlp))
        a, b = sols
        assert a.s_opt == b.s_opt
        assert a.objective == b.objective
        assert all(np.array_equal(x.as_array(), y.as_array())
                   for x, y in zip(a.states, b.states))

    def test_rigid_transform_invariance(self):
        angle, shift = 0.9, np.array([3.0, -2.0])
        c, s = math.cos(angle), math.sin(angle)
        q = np.array([[c, -s], [s, c]])

        # obstacle near but clear of the path: constraints present yet
        # inactive, so the optimum is unique and tightly resolvable
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        ob = static_obstacle(3, 2.5, var=0.02)
        refs = straight_refs(x0)
        sol = solve(build_nlp(CONFIG, x0, refs, [ob], CHANCE), max_iter=200)

        p0 = q @ np.array([x0.x, x0.y]) + shift
        x0_t = RobotState(p0[0], p0[1], x0.phi + angle, x0.v, x0.omega)
        refs_t = refs.copy()
        refs_t[:, :2] = refs[:, :2] @ q.T + shift
        ob_t = ObstacleForecast(
            obstacle_id=ob.obstacle_id, radius=ob.radius,
            mu=[q @ m + shift for m in ob.mu],
            sigma=[Covariance2.from_matrix(q @ sg.as_matrix() @ q.T) for sg in ob.sigma],
        )
        sol_t = solve(build_nlp(CONFIG, x0_t, refs_t, [ob_t], CHANCE), max_iter=200)

        assert sol.feasible and sol_t.feasible
        for a, b in zip(sol.states, sol_t.states):
            p = q @ np.array([a.x, a.y]) + shift
            assert p == pytest.approx((b.x, b.y), abs=1e-6)
        assert sol_t.s_opt == pytest.approx(sol.s_opt, abs=1e-6)

    def test_infeasible_when_fully_blocked(self):
        # enormous ellipses swallowing everything reachable, with x0
        # already deep inside: no feasible point exists even at s = 0
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        ob = ObstacleForecast(
            obstacle_id="wall", radius=30.0,
            mu=[np.array([0.0, 0.0])] * CONFIG.n_horizon,
            sigma=[Covariance2.zero()] * CONFIG.n_horizon,
        )
        nlp = build_nlp(CONFIG, x0, straight_refs(x0), [ob], CHANCE)
        sol = solve(nlp)
        assert not sol.feasible
        assert sol.status is SolveStatus.INFEASIBLE
        assert not sol.usable


class TestReferenceWindow:
    def test_spacing_on_long_straight_path(self):
        x0 = RobotState(0, 0, 0, 0.5, 0)
        refs = straight_refs(x0)
        assert refs.shape == (15, 5)
        assert np.allclose(refs[:, 1], 0.0)
        assert np.allclose(refs[:, 3], CONFIG.v_ref)
        assert np.allclose(np.diff(refs[:, 0]), CONFIG.v_ref * CONFIG.dt)
        assert refs[0, 0] == pytest.approx(CONFIG.v_ref * CONFIG.dt)

    def test_projection_from_lateral_offset(self):
        x0 = RobotState(2.0, 1.3, 0, 0.5, 0)
        path = np.array([[0.0, 0.0], [20.0, 0.0]])
        refs = extract_reference_window(path, x0, CONFIG)
        assert refs[0, 0] == pytest.approx(2.0 + CONFIG.v_ref * CONFIG.dt)
        assert np.allclose(refs[:, 1], 0.0)

    def test_clamps_at_path_end(self):
        x0 = RobotState(19.9, 0, 0, 0.5, 0)
        path = np.array([[0.0, 0.0], [20.0, 0.0]])
        refs = extract_reference_window(path, x0, CONFIG)
        assert np.allclose(refs[:, 0], 20.0)

    def test_multi_segment_corner(self):
        path = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 10.0]])
        x0 = RobotState(0.5, 0.0, 0, 0.5, 0)
        refs = extract_reference_window(path, x0, CONFIG)
        # first refs still on segment 1, later ones turned up segment 2
        assert refs[0] == pytest.approx([0.75, 0.0, 0.0, 0.5, 0.0])
        assert refs[1, :2] == pytest.approx([1.0, 0.0])
        assert refs[2, :2] == pytest.approx([1.0, 0.25])
        assert refs[-1, :2] == pytest.approx([1.0, 3.25])

    def test_single_waypoint_path(self):
        x0 = RobotState(1.0, 1.0, 0, 0.5, 0)
        refs = extract_reference_window(np.array([[4.0, 4.0]]), x0, CONFIG)
        assert np.allclose(refs[:, :2], [4.0, 4.0])

    def test_rejects_bad_path(self):
        x0 = RobotState(0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            extract_reference_window(np.zeros((0, 2)), x0, CONFIG)


class TestPlanner:
    def test_first_step_moves_toward_goal(self):
        planner = Planner(CONFIG, CHANCE)
        x0 = RobotState(0, 0, 0, 0.0, 0.0)
        cmd, sol = planner.step(x0, straight_refs(x0), [])
        assert sol.usable
        assert cmd[0] > 0.0
        assert planner.prev_solution is sol

    def test_prunes_far_obstacles(self):
        planner = Planner(CONFIG, CHANCE)
        x0 = RobotState(0, 0, 0, 0.0, 0.0)
        far = static_obstacle(100.0, 100.0)
        pruned = planner._prune(x0, [far])
        assert pruned == []
        near = static_obstacle(3.0, 0.0)
        assert planner._prune(x0, [near]) == [near]

    def test_disable_flag_ignores_obstacles(self):
        planner = Planner(CONFIG, CHANCE, disable_obstacle_constraints=True)
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        blocking = static_obstacle(1.0, 0.0, var=0.5)
        cmd, sol = planner.step(x0, straight_refs(x0), [blocking])
        assert sol.usable
        assert cmd[0] > 0.3  # drives straight through

    def test_fallback_shift_then_braking(self):
        planner = Planner(CONFIG, CHANCE)
        x0 = RobotState(0, 0, 0, 0.5, 0.0)
        cmd0, sol0 = planner.step(x0, straight_refs(x0), [])
        assert sol0.usable

        wall = ObstacleForecast(
            obstacle_id="wall", radius=30.0,
            mu=[np.array([0.0, 0.0])] * CONFIG.n_horizon,
            sigma=[Covariance2.zero()] * CONFIG.n_horizon,
        )
        # failure 1: reuse of the shifted previous plan
        cmd1, sol1 = planner.step(x0, straight_refs(x0), [wall])
        assert not sol1.usable
        assert cmd1[0] == pytest.approx(planner.prev_solution.states[0].v)
        # failure 2: braking ramp toward zero
        cmd2, sol2 = planner.step(x0, straight_refs(x0), [wall])
        assert not sol2.usable
        assert cmd2[0] == pytest.approx(
            max(abs(cmd1[0]) - CONFIG.a_max * CONFIG.dt, 0.0))
        # failure 3: keeps ramping down to a stop
        cmd3, _ = planner.step(x0, straight_refs(x0), [wall])
        assert cmd3[0] <= cmd2[0]

    def test_shifted_warm_start_duplicates_last_step(self):
        planner = Planner(CONFIG, CHANCE)
        x0 = RobotState(0, 0, 0, 0.0, 0.0)
        _, sol = planner.step(x0, straight_refs(x0), [])
        shifted = planner._shifted_warm_start()
        assert shifted.states[0] == sol.states[1]
        assert shifted.states[-1] == sol.states[-1] == shifted.states[-2]
        assert shifted.inputs[0] == sol.inputs[1]


class TestConfigValidation:
    def test_defaults(self):
        c = MpcConfig()
        assert c.n_horizon == 15
        assert c.dt == 0.5
        assert c.s_ref == pytest.approx(math.sqrt(5.991))

    @pytest.mark.parametrize("field,value", [
        ("n_horizon", 0), ("dt", 0.0), ("v_max", -1.0), ("solve_time_cap", 0.0),
    ])
    def test_rejects_nonpositive(self, field, value):
        with pytest.raises(ValueError):
            MpcConfig(**{field: value})
