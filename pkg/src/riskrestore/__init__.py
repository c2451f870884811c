"""Risk-averse two-stage restoration planning for damaged distribution grids.

Repair modes are chosen before repair times are known; each scenario then
schedules repairs, switching and mobile generators. Solvers are written
in-house: a bounded dual simplex, a branch-and-bound driver and a scenario
decomposition wrapped in its own branch-and-bound.
"""

from .formulation import FleetSpec, RiskConfig, load_fleet
from .metrics import MeanRiskReport, cvar, resilience
from .netgraph import NetworkModel, load_network, preassign_ders
from .uncertainty import RepairModeTable, ScenarioSet, load_mode_table, load_scenarios, mttr, sample_scenarios

__version__ = "0.1.0"

__all__ = [
    "FleetSpec",
    "MeanRiskReport",
    "NetworkModel",
    "RepairModeTable",
    "RiskConfig",
    "ScenarioSet",
    "cvar",
    "load_fleet",
    "load_mode_table",
    "load_network",
    "load_scenarios",
    "mttr",
    "preassign_ders",
    "resilience",
    "sample_scenarios",
]
