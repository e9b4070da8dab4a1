"""Forged topology errors through analog data injection on DC state estimators."""

__version__ = "0.1.0"

from .attack import AttackSpec, build_problem, solve, target_state, verify_attack
from .estimation import WeightModel, chi_square_test, estimate, normalized_residues
from .forecasting import StateHistory, attack_worth_check, fit_yule_walker, forecast
from .network import build_jacobian, dc_power_flow, load_case, simulate_measurements
from .topology import (
    TopologyError,
    branch_flow_error,
    build_error_model,
    expected_residue,
    is_detectable,
)

__all__ = [
    "AttackSpec",
    "StateHistory",
    "TopologyError",
    "WeightModel",
    "attack_worth_check",
    "branch_flow_error",
    "build_error_model",
    "build_jacobian",
    "build_problem",
    "chi_square_test",
    "dc_power_flow",
    "estimate",
    "expected_residue",
    "fit_yule_walker",
    "forecast",
    "is_detectable",
    "load_case",
    "normalized_residues",
    "simulate_measurements",
    "solve",
    "target_state",
    "verify_attack",
]
