"""Uncertainty-aware MPC trajectory planning with forecast-ellipse constraints."""

from .dynamics import ControlInput, RobotState
from .forecast import ObstacleForecast, Var2Model, VelocityForecast
from .geometry import ChanceLevel, Covariance2, ForecastEllipse, chi2_threshold
from .mpc import MpcConfig, MpcSolution, Planner, SolveStatus
from .sim import RobotSpec, ScenarioConfig, SimLog, run_scenario, separation_report

__all__ = [
    "ChanceLevel",
    "ControlInput",
    "Covariance2",
    "ForecastEllipse",
    "MpcConfig",
    "MpcSolution",
    "ObstacleForecast",
    "Planner",
    "RobotSpec",
    "RobotState",
    "ScenarioConfig",
    "SimLog",
    "SolveStatus",
    "Var2Model",
    "VelocityForecast",
    "chi2_threshold",
    "run_scenario",
    "separation_report",
]
