"""Nonlinear control allocation with a saturation-aware neural allocator.

A ReLU network maps demanded moments and flight condition to control
deflections and is trained without labels by pushing its saturated output
through the effectiveness model. A linearize-and-solve box QP serves as the
baseline, and the evaluation tools measure worst-case error, coverage of the
attainable moment set, trajectory tracking, timing and closed-loop bounds.
"""

from .allocators import ConstantAllocator, OracleAllocator, ZeroAllocator
from .baseline import QPAllocator, linearize, solve_box_qp, weighted_pinv
from .dataset import Dataset, generate, lhs_sample, norm_stats, split
from .effectiveness import (
    DEFAULT_BOX,
    AffineModel,
    BoxSet,
    SyntheticModel,
    SyntheticModelParams,
    WeightMatrix,
    project_box,
)
from .metrics import coverage_ratio, mae, run_trajectory
from .neuralnet import NeuralAllocator, TrainConfig, fit_dataset, parameter_count, parse_arch
from .stability import ClassKSpec, Monomial, check_ultimate_bound, rho_bound, simulate

__all__ = [
    "AffineModel", "BoxSet", "ClassKSpec", "ConstantAllocator", "DEFAULT_BOX", "Dataset", "Monomial",
    "NeuralAllocator", "OracleAllocator", "QPAllocator", "SyntheticModel", "SyntheticModelParams",
    "TrainConfig", "WeightMatrix", "ZeroAllocator", "check_ultimate_bound", "coverage_ratio", "fit_dataset",
    "generate", "lhs_sample", "linearize", "mae", "norm_stats", "parameter_count", "parse_arch",
    "project_box", "rho_bound", "run_trajectory", "simulate", "solve_box_qp", "split", "weighted_pinv",
]
