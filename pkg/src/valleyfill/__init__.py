"""Valley-filling EV charging on radial feeders with voltage limits."""

from .cases import Case, load_case
from .errors import (
    BaselineViolationError,
    DomainError,
    InfeasibleScenarioError,
    NumericError,
    StructuralError,
    ValleyFillError,
)
from .fleet import Baseline, EvSpec, FleetScenario, Horizon, ScenarioConfig, generate_scenario
from .grid import FeederModel, LineSegment, NodalLoad, build_feeder, distflow_voltages, lindistflow_voltages
from .qp import ChargingProblem, assemble_problem

__version__ = "0.1.0"

__all__ = [
    "Baseline",
    "BaselineViolationError",
    "Case",
    "ChargingProblem",
    "DomainError",
    "EvSpec",
    "FeederModel",
    "FleetScenario",
    "Horizon",
    "InfeasibleScenarioError",
    "LineSegment",
    "NodalLoad",
    "NumericError",
    "ScenarioConfig",
    "StructuralError",
    "ValleyFillError",
    "assemble_problem",
    "build_feeder",
    "distflow_voltages",
    "generate_scenario",
    "lindistflow_voltages",
    "load_case",
]
