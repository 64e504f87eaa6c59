"""Learning compressed, curvature-aware MPC costs for short-horizon
contouring control: differentiable solver, cost-prediction network,
training loop and experiment harness."""

from ._kernels import BACKEND
from .costs import CostSchedule, PenaltySpec, expand_cost
from .dynamics import (
    KinematicModel,
    ModelParams,
    PacejkaModel,
    kinematic_sim_params,
    pacejka_hw_params,
    pacejka_sim_params,
)
from .solver import (
    AugmentedVehicleModel,
    InfeasibleError,
    LapResult,
    MpcProblem,
    SolveRecord,
    SolverError,
    mpcc_problem,
    run_lap,
    solve,
)
from .track import ContextWindow, TrackModel, TrackSegment, bundled_track, load_track

__all__ = [
    "BACKEND",
    "AugmentedVehicleModel",
    "ContextWindow",
    "CostSchedule",
    "InfeasibleError",
    "KinematicModel",
    "LapResult",
    "ModelParams",
    "MpcProblem",
    "PacejkaModel",
    "PenaltySpec",
    "SolveRecord",
    "SolverError",
    "TrackModel",
    "TrackSegment",
    "bundled_track",
    "expand_cost",
    "kinematic_sim_params",
    "load_track",
    "mpcc_problem",
    "pacejka_hw_params",
    "pacejka_sim_params",
    "run_lap",
    "solve",
]

__version__ = "0.1.0"
