"""Motion-manifold movement primitives.

Via-point trajectory curves with Gaussian bases, an autoencoder latent
manifold with optional isometric regularization, latent densities with
threshold rejection sampling, SE(3) pose curves, and sampling-based
online replanning against moving obstacles.
"""

from .basis import (BasisSet, CurveModel, CurveParams, PhaseProfile,
                    TimedTrajectory, evaluate_batch,
                    load_trajectory_dataset, save_trajectory_dataset)
from .density import (GmmModel, KdeModel, RejectionResult, SampleFilter,
                      gmm_fit, gmm_logpdf, gmm_sample, kde_build,
                      kde_logpdf, kde_sample, load_density,
                      min_loglik_threshold, rejection_sample, save_density)
from .envs import (Disk, EvalReport, ModelBundle, PlanarEnv,
                   build_bundle, collision_check, evaluate_success,
                   fit_demos, generate_continuum_demos, generate_env,
                   sample_curves, success_rate)
from .errors import (BranchError, DegenerateSupportError,
                     DistortionUndefinedError, GenerationError, MetricError,
                     ReplanInfeasibleError, SamplingStarvedError,
                     SingularFitError, TrainingError)
from .geometry import (ConfigMetric, CurveGeomMetric, PullbackMetric,
                       curvegeom_euclidean, curvegeom_general,
                       pullback_metric, relaxed_distortion)
from .lie import (Se3CurveParams, Se3ManifoldModel, Se3Trajectory,
                  eval_position_curve, eval_rotation_curve, exp_so3,
                  fit_se3_params, hat, log_so3, make_pouring_demos,
                  se3_recon_loss, so3_jacobian_right,
                  so3_jacobian_right_inv, train_se3, vee)
from .nets import AdamState, Mlp, adam_step
from .replan import (DynamicConstraint, EpisodeTrace, MovingDisk,
                     ReplanConfig, ReplanState, constraint_from_script,
                     load_obstacle_script, predict_violation, run_episode,
                     save_obstacle_script, solve_replan)
from .training import ManifoldModel, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BasisSet", "BranchError", "ConfigMetric", "CurveGeomMetric",
    "CurveModel", "CurveParams", "DegenerateSupportError", "Disk",
    "DistortionUndefinedError", "DynamicConstraint", "EpisodeTrace",
    "EvalReport", "GenerationError", "GmmModel", "KdeModel", "ManifoldModel",
    "MetricError", "Mlp", "ModelBundle", "MovingDisk",
    "PhaseProfile", "PlanarEnv", "PullbackMetric", "RejectionResult",
    "ReplanConfig", "ReplanInfeasibleError", "ReplanState", "SampleFilter",
    "SamplingStarvedError", "Se3CurveParams", "Se3ManifoldModel",
    "Se3Trajectory", "SingularFitError", "TimedTrajectory", "TrainConfig",
    "TrainingError", "adam_step", "build_bundle", "collision_check",
    "constraint_from_script", "curvegeom_euclidean", "curvegeom_general",
    "eval_position_curve", "eval_rotation_curve", "evaluate_batch",
    "evaluate_success", "exp_so3", "fit_demos", "fit_se3_params",
    "generate_continuum_demos", "generate_env", "gmm_fit", "gmm_logpdf",
    "gmm_sample", "hat", "kde_build", "kde_logpdf", "kde_sample",
    "load_density", "load_obstacle_script", "load_trajectory_dataset",
    "log_so3", "make_pouring_demos", "min_loglik_threshold",
    "predict_violation", "pullback_metric", "rejection_sample",
    "relaxed_distortion", "run_episode", "sample_curves", "save_density",
    "save_obstacle_script", "save_trajectory_dataset", "se3_recon_loss",
    "so3_jacobian_right", "so3_jacobian_right_inv", "solve_replan",
    "success_rate", "train", "train_se3", "vee",
]
