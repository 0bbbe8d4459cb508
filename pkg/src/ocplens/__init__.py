"""Consistency analysis and weight learning for finite-horizon OCPs."""

from .consistency import (
    ConsistencyReport,
    DescentProbe,
    DirectionalCorrection,
    StageConstraint,
    aggregate,
    descent_probe,
    score_closed_loop,
    score_constraint,
    score_open_loop,
)
from .costs import (
    COMPONENTS,
    CostContext,
    LeadPrediction,
    WeightSchedule,
    default_weights,
    eval_component,
    assemble_objective,
    uniform_weights,
)
from .dynamics import Plan, SystemModel, linearize, rollout, step, unicycle_model
from .geometry import ReferencePath
from .learning import LearnerConfig, RequirementSpec, SpeedBand, run_algorithm1
from .mpc import MpcTrace, PredictionModel, run_mpc, shift_warm_start
from .sensitivity import SensitivityMatrix, build_F, build_F_cl, eliminated_gradient, first_input_gradients
from .solver import SolveResult, SolverConfig, eliminated_objective_gradient, solve, solve_ocp
from .weight_lp import CorrectionSample, LearningProblem, hinge_objective, solve_weight_lp

__version__ = "0.1.0"
