"""Discrete-event simulator of a Host-1 -> SW1 -> SW2 -> Host-2 TSN chain."""

from tsnsim.engine import InvariantViolation, Simulator, TraceBundle, run
from tsnsim.scenario import Scenario, ScenarioError, load_scenario, paper_scenario

__version__ = "0.1.0"

__all__ = [
    "InvariantViolation", "Scenario", "ScenarioError", "Simulator", "TraceBundle",
    "load_scenario", "paper_scenario", "run",
]
