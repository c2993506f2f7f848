"""Sensing-to-actuation pipeline for a fixed-wing vehicle in a wind tunnel.

Five-hole probe calibration, a control-affine wrench model with a soft
left/right mirror prior, convex control allocation, and a synthetic plant
that stands in for the physical rig.
"""
from .allocator import (
    AllocationProblem,
    AllocationSolution,
    TrackingConfig,
    TrackingLog,
    build_normal_equations,
    objective,
    solve,
    track_sequence,
)
from .dynamics import (
    AffineModel,
    Control,
    DynamicsTrainConfig,
    Observation,
    SymmetryConfig,
    UnstructuredModel,
    Wrench,
    affine_at,
    build_unstructured,
    eval_rmse,
    predict,
    predict_wrench,
    symmetry_loss,
    train_dynamics,
    train_unstructured,
    training_loss,
)
from .harness import ExperimentConfig, MetricsReport, VARIANTS, rmssd, run_ablation_suite
from .plant import GustState, PlantParams, TunnelCondition, generate_dataset, true_wrench
from .probe import (
    AirDensity,
    CalibrationOutput,
    CalibrationTrainConfig,
    FlowState,
    NormalizedPressures,
    ProbePressures,
    calibrate,
    dynamic_pressure_correction,
    estimate_flow,
    normalize,
    reconstruct_airspeed,
    train_calibration,
)

__version__ = "0.1.0"
