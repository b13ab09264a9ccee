"""Invariant funnels for uncertain nonlinear systems.

An incremental LTV model around a nominal trajectory, sampled uncertainty
bounds, a first-order-hold parameterization of the Lyapunov matrix and
copositivity conditions turn funnel synthesis into one SDP.
"""

from .config import RunConfig, load_config
from .constraints import CircularObstacle, ConstraintSet, box_halfspaces
from .funnel import Funnel, load, save
from .incremental import SamplingConfig, SegmentBounds, TimeGrid, build_ltv, estimate_bounds
from .model import NominalTrajectory, SystemModel, build_unicycle_demo, get_model, unicycle
from .sdp import SynthesisSettings, build_problem, extract_funnel, solve
from .verify import DisturbancePolicy, monte_carlo, verify_funnel

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "load_config",
    "CircularObstacle",
    "ConstraintSet",
    "box_halfspaces",
    "Funnel",
    "load",
    "save",
    "SamplingConfig",
    "SegmentBounds",
    "TimeGrid",
    "build_ltv",
    "estimate_bounds",
    "NominalTrajectory",
    "SystemModel",
    "build_unicycle_demo",
    "get_model",
    "unicycle",
    "SynthesisSettings",
    "build_problem",
    "extract_funnel",
    "solve",
    "DisturbancePolicy",
    "monte_carlo",
    "verify_funnel",
]
