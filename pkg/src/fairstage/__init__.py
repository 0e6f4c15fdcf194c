"""Precision-optimal fair selection policies for k-stage pipelines."""

from .harness import SweepConfig, SweepRow, empirical_cdf, enumerate_combinations, sweep_alpha, three_stage_study
from .lpsolver import LpProblem, LpSolution, Status, solve
from .metrics import evaluate, polf, polf_bound, volf
from .model import (
    Budgets,
    Criterion,
    FairnessSpec,
    FeatureSpace,
    InputError,
    InvariantViolation,
    JointDistribution,
    Policy,
    Scope,
    StagePlan,
)
from .policy import optimize

__version__ = "0.1.0"

__all__ = [
    "Budgets",
    "Criterion",
    "FairnessSpec",
    "FeatureSpace",
    "InputError",
    "InvariantViolation",
    "JointDistribution",
    "LpProblem",
    "LpSolution",
    "Policy",
    "Scope",
    "StagePlan",
    "Status",
    "SweepConfig",
    "SweepRow",
    "empirical_cdf",
    "enumerate_combinations",
    "evaluate",
    "optimize",
    "polf",
    "polf_bound",
    "solve",
    "sweep_alpha",
    "three_stage_study",
    "volf",
]
