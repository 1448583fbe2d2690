"""Command-line front end: scenario runs, region demos and error maps.

Subcommands: `run`, `regions`, `error-map`. Scenario configs are TOML
with units spelled out in key names. Outputs are CSV logs, a JSON
summary and deterministic SVG plots.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import RobotState
from .geometry import (
    Covariance2,
    build_forecast_ellipse,
    chi2_threshold,
    eig_sym_2x2,
    ellipse_area,
    enlargement_error,
    rectangle_region,
)
from .mpc import MpcConfig
from .plotting import (
    BLUE,
    GREEN,
    ORANGE,
    PINK,
    RED,
    SvgCanvas,
    draw_forecast_ellipse,
    draw_rectangle,
    ellipse_polygon,
)
from .sim import RobotSpec, ScenarioConfig, SimLog, run_scenario, separation_report

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COLLISION = 2
EXIT_IO = 3

log = logging.getLogger("umpc")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenario config


_MPC_KEYS = {
    "n_horizon": "n_horizon",
    "dt_s": "dt",
    "w_p_per_m2": "w_p",
    "w_v_s2_per_m2": "w_v",
    "w_a_s4_per_m2": "w_a",
    "w_alpha_s4": "w_alpha",
    "v_ref_mps": "v_ref",
    "s_ref": "s_ref",
    "v_max_mps": "v_max",
    "omega_max_radps": "omega_max",
    "a_max_mps2": "a_max",
    "alpha_max_radps2": "alpha_max",
    "r_robot_m": "r_robot",
    "solve_time_cap_s": "solve_time_cap",
}


def load_scenario(path: Path, seed_override: int | None = None,
                  disable_obstacle_constraints: bool = False,
                  noise_std: float | None = None) -> ScenarioConfig:
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        # tomllib messages carry "at line L, column C"
        raise ConfigError(f"{path}: {exc}") from exc

    try:
        mpc_raw = raw.get("mpc", {})
        unknown = set(mpc_raw) - set(_MPC_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown [mpc] keys: {sorted(unknown)}")
        mpc = MpcConfig(**{_MPC_KEYS[k]: v for k, v in mpc_raw.items()})

        robots = []
        for idx, rob in enumerate(raw.get("robots", [])):
            try:
                init = rob.get("initial_state", None)
                state = (RobotState(*[float(v) for v in init]) if init is not None
                         else RobotState(*rob["path"][0], 0.0, 0.0, 0.0))
                robots.append(RobotSpec(
                    robot_id=str(rob["id"]),
                    initial=state,
                    path=np.asarray(rob["path"], dtype=float),
                    radius=float(rob["radius_m"]),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: [[robots]] entry {idx}: {exc}") from exc

        return ScenarioConfig(
            robots=robots,
            mpc=mpc,
            chance_p=float(raw.get("chance_p", 0.95)),
            duration=float(raw.get("duration_s", 60.0)),
            rng_seed=int(seed_override if seed_override is not None
                         else raw.get("rng_seed", 0)),
            history_window=int(raw.get("history_window_samples", 40)),
            dt_ctrl=float(raw.get("dt_ctrl_s", 0.1)),
            noise_std=float(noise_std if noise_std is not None
                            else raw.get("noise_std_m", 0.0)),
            disable_obstacle_constraints=disable_obstacle_constraints,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# emitters

LOG_COLUMNS = [
    "time_s", "robot_id", "x_m", "y_m", "phi_rad", "v_mps", "omega_radps",
    "cmd_v_mps", "cmd_omega_radps", "status", "iterations", "s_opt",
    "planned_states", "obstacle_forecasts",
]


def _pack_planned(states) -> str:
    return " ".join(repr(v) for st in states for v in st.as_array())


def _pack_forecasts(forecasts) -> str:
    chunks = []
    for ob in forecasts:
        vals = " ".join(
            f"{mu[0]!r} {mu[1]!r} {sig.xx!r} {sig.xy!r} {sig.yy!r}"
            for mu, sig in zip(ob.mu, ob.sigma)
        )
        chunks.append(f"{ob.obstacle_id}:{ob.radius!r}:{vals}")
    return ";".join(chunks)


def write_log_csv(logdata: SimLog, out: Path) -> None:
    """Deterministic cycle log: everything except solver wall time."""
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for rec in logdata.records:
            st = rec.state
            w.writerow([
                repr(rec.time), rec.robot_id, repr(st.x), repr(st.y), repr(st.phi),
                repr(st.v), repr(st.omega), repr(rec.cmd[0]), repr(rec.cmd[1]),
                rec.status, rec.iterations, repr(rec.s_opt),
                _pack_planned(rec.planned), _pack_forecasts(rec.forecasts),
            ])


def write_distances_csv(logdata: SimLog, out: Path) -> None:
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "robot_i", "robot_j", "distance_m"])
        for t, ri, rj, d in logdata.distances:
            w.writerow([repr(t), ri, rj, repr(d)])


def write_timing_csv(logdata: SimLog, out: Path) -> None:
    """Solver wall times; excluded from the byte-identity guarantee."""
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "robot_id", "wall_time_s"])
        for rec in logdata.records:
            w.writerow([repr(rec.time), rec.robot_id, repr(rec.wall_time)])


def write_trajectory_svg(logdata: SimLog, robot_id: str, out: Path) -> None:
    """Reference waypoints (green), travelled/planned positions (blue),
    pre-enlargement forecast regions (pink)."""
    spec = next(r for r in logdata.config.robots if r.robot_id == robot_id)
    records = [r for r in logdata.records if r.robot_id == robot_id]
    chance = chi2_threshold(logdata.config.chance_p)

    xs = [spec.path[:, 0].min(), spec.path[:, 0].max()]
    ys = [spec.path[:, 1].min(), spec.path[:, 1].max()]
    for rec in records:
        xs.extend([rec.state.x]); ys.extend([rec.state.y])
        for ob in rec.forecasts:
            for mu in ob.mu:
                xs.append(mu[0]); ys.append(mu[1])
    pad = 1.5
    canvas = SvgCanvas((min(xs) - pad, max(xs) + pad), (min(ys) - pad, max(ys) + pad))

    every = max(1, len(records) // 12)
    for rec in records[::every]:
        for ob in rec.forecasts:
            for mu, sig in zip(ob.mu, ob.sigma):
                ell = build_forecast_ellipse(mu, sig, chance, spec.radius, max(ob.radius, 1e-3))
                draw_forecast_ellipse(canvas, ell, opacity=0.10)

    n_path = max(int(np.ceil(np.linalg.norm(np.diff(spec.path, axis=0), axis=1).sum() / 0.5)), 2)
    t = np.linspace(0.0, 1.0, n_path)
    # resample waypoint polyline as dots
    seg = np.diff(spec.path, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    for frac in t:
        s = frac * cum[-1]
        j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        d = (s - cum[j]) / seg_len[j] if seg_len[j] > 0 else 0.0
        pt = spec.path[j] + d * seg[j]
        canvas.dot(pt[0], pt[1], 3.0, GREEN)

    for rec in records:
        for st in rec.planned[:: max(1, len(rec.planned) // 5) if rec.planned else 1]:
            canvas.dot(st.x, st.y, 1.5, BLUE, opacity=0.35)
        canvas.dot(rec.state.x, rec.state.y, 2.5, BLUE)

    canvas.text(10, 20, f"robot {robot_id}: reference (green), trajectory (blue), "
                        f"forecast regions (pink)")
    out.write_text(canvas.render())


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    try:
        config = load_scenario(
            Path(args.config),
            seed_override=args.seed,
            disable_obstacle_constraints=args.disable_obstacle_constraints,
            noise_std=args.noise_std,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    log.info("running scenario %s", args.config)
    simlog = run_scenario(config)

    try:
        write_log_csv(simlog, out_dir / "log.csv")
        write_distances_csv(simlog, out_dir / "distances.csv")
        write_timing_csv(simlog, out_dir / "timing.csv")
        if len(config.robots) >= 2:
            report = separation_report(simlog)
            (out_dir / "summary.json").write_text(
                json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
        for spec in config.robots:
            write_trajectory_svg(simlog, spec.robot_id, out_dir / f"trajectory_{spec.robot_id}.svg")
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    if simlog.collision is not None:
        t, ri, rj, d = simlog.collision
        print(f"collision: robots {ri} and {rj} at t={t:.1f} s, distance {d:.3f} m",
              file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


def _parse_sigma(args) -> Covariance2:
    try:
        return Covariance2(args.sigma[0], args.sigma[1], args.sigma[2])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_regions(args) -> int:
    try:
        sigma = _parse_sigma(args)
        chance = chi2_threshold(args.p)
        if args.r_sum < 0:
            raise ConfigError("r-sum must be non-negative")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    eig = eig_sym_2x2(sigma)
    s = chance.s
    inner_axes = (s * math.sqrt(eig.lambda1), s * math.sqrt(eig.lambda2))
    outer_axes = (inner_axes[0] + args.r_sum, inner_axes[1] + args.r_sum)
    rect = rectangle_region((0.0, 0.0), sigma, args.p)

    area_ellipse = ellipse_area(sigma, chance)
    area_rect = rect.area
    print(f"ellipse area: {area_ellipse:.6f} m^2")
    print(f"rectangle area: {area_rect:.6f} m^2")
    print(f"rectangle/ellipse ratio: {area_rect / area_ellipse:.6f}")

    lim = max(outer_axes[0], rect.half_widths[0]) * 1.2
    canvas = SvgCanvas((-lim, lim), (-lim, lim))
    rot = eig.rotation()
    canvas.polyline(ellipse_polygon((0, 0), rot, outer_axes), RED, closed=True)
    canvas.polyline(ellipse_polygon((0, 0), rot, inner_axes), ORANGE, closed=True,
                    fill=PINK, opacity=0.3)
    draw_rectangle(canvas, rect)
    canvas.text(10, 20, f"p={args.p}: inner ellipse (orange), enlarged (red), "
                        f"rectangle (blue)")
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "regions.svg").write_text(canvas.render())
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_error_map(args) -> int:
    try:
        sigma = _parse_sigma(args)
        chance = chi2_threshold(args.p)
        if args.resolution < 16:
            raise ConfigError(f"resolution must be >= 16, got {args.resolution}")
        if args.r_sum <= 0:
            raise ConfigError("r-sum must be positive")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    thetas = np.linspace(0.0, 2.0 * math.pi, args.resolution, endpoint=False)
    errors = [enlargement_error(sigma, chance, args.r_sum, th) for th in thetas]

    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "error_map.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta_rad", "error_m"])
            for th, err in zip(thetas, errors):
                w.writerow([repr(float(th)), repr(float(err))])

        # polar plot: radius = baseline + scaled error
        base = 1.0
        scale = 0.45 / max(max(abs(e) for e in errors), 1e-12)
        pts = np.array([
            [(base + scale * e) * math.cos(th), (base + scale * e) * math.sin(th)]
            for th, e in zip(thetas, errors)
        ])
        canvas = SvgCanvas((-1.6, 1.6), (-1.6, 1.6))
        ring = np.array([[base * math.cos(t), base * math.sin(t)]
                         for t in np.linspace(0, 2 * math.pi, 128, endpoint=False)])
        canvas.polyline(ring, "#bbbbbb", stroke_px=0.8, closed=True)
        canvas.polyline(pts, RED, closed=True)
        canvas.text(10, 20, f"enlargement error over direction (grey ring = 0, "
                            f"scale {scale:.3g} px/m)")
        (out / "error_map.svg").write_text(canvas.render())
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"max |error|: {max(abs(e) for e in errors):.6g} m")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="umpc",
        description="Uncertainty-aware MPC trajectory planner: scenario simulator "
                    "and forecast-region demos.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config in closed loop")
    p_run.add_argument("--config", required=True, help="scenario TOML file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override rng seed")
    p_run.add_argument("--disable-obstacle-constraints", action="store_true",
                       help="negative control: plan without keep-out constraints")
    p_run.add_argument("--noise-std", type=float, default=None,
                       help="std of Gaussian noise on communicated positions (m)")
    p_run.set_defaults(func=cmd_run)

    p_reg = sub.add_parser("regions", help="compare ellipse and rectangle forecast regions")
    p_reg.add_argument("--p", type=float, default=0.90, help="confidence level")
    p_reg.add_argument("--sigma", type=float, nargs=3, metavar=("XX", "XY", "YY"),
                       required=True, help="covariance entries (m^2)")
    p_reg.add_argument("--r-sum", type=float, default=0.0, help="enlargement radius (m)")
    p_reg.add_argument("--out", required=True, help="output directory")
    p_reg.set_defaults(func=cmd_regions)

    p_err = sub.add_parser("error-map", help="enlargement approximation error over direction")
    p_err.add_argument("--p", type=float, default=0.95)
    p_err.add_argument("--sigma", type=float, nargs=3, metavar=("XX", "XY", "YY"),
                       required=True)
    p_err.add_argument("--r-sum", type=float, default=1.5)
    p_err.add_argument("--resolution", type=int, default=90, help="number of directions (>= 16)")
    p_err.add_argument("--out", required=True)
    p_err.set_defaults(func=cmd_error_map)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("UMPC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
