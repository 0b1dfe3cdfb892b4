"""Switching Kalman filtering, mismatched-filter error quantification and
minimum-sum clustering of SLDS modes."""

__version__ = "0.1.0"

from .clustering import (
    ClusterReport,
    Partition,
    excess_consistency_check,
    min_sum_cluster,
    reduce_model,
    theorem1_excess,
)
from .kalman import GaussianBelief, SkfResult, kf_filter, measurement_update, skf_map, time_update
from .mismatch_error import MseReport, PairTrajectoryStats, enumerate_pairs, error_step, expected_mse
from .mode_graph import ModeGraph, build_graph, conditional_mse, edge_weight
from .slds_core import (
    DetectionModel,
    ModeParams,
    SimulationRun,
    SldsModel,
    build_diffusion_slds,
    simulate,
    trajectory_prior,
    validate_model,
)

__all__ = [
    "ClusterReport",
    "DetectionModel",
    "GaussianBelief",
    "ModeGraph",
    "ModeParams",
    "MseReport",
    "PairTrajectoryStats",
    "Partition",
    "SimulationRun",
    "SkfResult",
    "SldsModel",
    "build_diffusion_slds",
    "build_graph",
    "conditional_mse",
    "edge_weight",
    "enumerate_pairs",
    "error_step",
    "excess_consistency_check",
    "expected_mse",
    "kf_filter",
    "measurement_update",
    "min_sum_cluster",
    "reduce_model",
    "simulate",
    "skf_map",
    "theorem1_excess",
    "time_update",
    "trajectory_prior",
    "validate_model",
]
