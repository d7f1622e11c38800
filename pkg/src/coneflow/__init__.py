"""Numerical conical Kahler-Ricci flow on the sphere with two antipodal cone points."""
__version__ = "0.1.0"

from .grid import RadialGrid
from .geometry import ConeGeometry, RadialField
from .polar import PolarChart, integrate_polar
from .elliptic_init import SmoothingResult, pipeline
from .flow import FlowConfig, FlowState, Trajectory, run
from .cascade import CascadePlan, run_cascade, verdict

__all__ = [
    "RadialGrid",
    "ConeGeometry",
    "RadialField",
    "PolarChart",
    "integrate_polar",
    "SmoothingResult",
    "pipeline",
    "FlowConfig",
    "FlowState",
    "Trajectory",
    "run",
    "CascadePlan",
    "run_cascade",
    "verdict",
]
