"""Closed-form toy diffusion models and the generalization-gap metric ladder.

The package builds circle datasets with paired train/val splits, evaluates
exact posterior-mean denoisers (optionally error-prone, conditional, or
guided), samples probability-flow trajectories with Heun's method, and
measures the train/val generalization gap with reconstruction- and
Fréchet-distance-based metrics, including a prior-matched multi-subset FD
protocol for externally extracted features.
"""

from .geometry import (ClassPartition, DegeneratePartitionError, NoiseSchedule,
                       PointDataset, load_csv, make_circle_dataset, make_schedule,
                       partition_classes, save_csv)
from .predictors import (ConditionalDenoiser, ErrorProneDenoiser, GuidedDenoiser,
                         OptimalDenoiser, PredictorSpec, decomposition_residual,
                         error_prone_predict, posterior_mean)
from .sampling import (NumericDivergenceError, Trajectory, forward_noise, heun_sample,
                       memorization_check, sample_endpoints, save_trajectories_csv,
                       snap_stop_sigma, truncated_endpoints, truncated_inference)
from .metrics import (GapCurve, GapGrid, GaussianSummary, IdentityFeatures,
                      InvalidCovarianceError, LadderResult, RandomLinearFeatures,
                      ExternalFeatures, fit_gaussian, frechet_distance, gap_curve,
                      gap_grid, ladder_metric, recon_error, recon_error_per_point,
                      truncated_gap_comparison)
from .fd_protocol import (BaselineReport, FeatureSet, InfeasiblePlanError,
                          ProtocolReport, SubsetPlan, baseline_mismatch, draw_subsets,
                          load_features, make_plan, match_prior, protocol_fd,
                          save_features)
from .experiments import (ConfigError, ExperimentConfig, class_conditional_gap_curve,
                          run, run_memorization, validate)

__version__ = "0.1.0"

__all__ = [
    "ClassPartition", "DegeneratePartitionError", "NoiseSchedule", "PointDataset",
    "load_csv", "make_circle_dataset", "make_schedule", "partition_classes", "save_csv",
    "ConditionalDenoiser", "ErrorProneDenoiser", "GuidedDenoiser", "OptimalDenoiser",
    "PredictorSpec", "decomposition_residual", "error_prone_predict", "posterior_mean",
    "NumericDivergenceError", "Trajectory", "forward_noise", "heun_sample",
    "memorization_check", "sample_endpoints", "save_trajectories_csv", "snap_stop_sigma",
    "truncated_endpoints", "truncated_inference",
    "GapCurve", "GapGrid", "GaussianSummary", "IdentityFeatures", "InvalidCovarianceError",
    "LadderResult", "RandomLinearFeatures", "ExternalFeatures", "fit_gaussian",
    "frechet_distance", "gap_curve", "gap_grid", "ladder_metric", "recon_error",
    "recon_error_per_point", "truncated_gap_comparison",
    "BaselineReport", "FeatureSet", "InfeasiblePlanError", "ProtocolReport", "SubsetPlan",
    "baseline_mismatch", "draw_subsets", "load_features", "make_plan", "match_prior",
    "protocol_fd", "save_features",
    "ConfigError", "ExperimentConfig", "class_conditional_gap_curve", "run",
    "run_memorization", "validate",
]
