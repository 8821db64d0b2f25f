"""Block-sparse Gaussian-mixture distance fields with analytic gradients, and
scan-to-map LiDAR localization on top of them."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .edt import ExtremaSet, LocalEdtGrid, OccupancyGrid, exact_edt, find_extrema, voxelize_region
from .eskf import ESKF, ImuSample, NominalState, NoiseParams, StateHistory, deskew, pose_at, predict, update_pose
from .field import FieldSample, GaussianKernel, eval_kernel, eval_kernel_gradient, eval_mixture
from .fitter import ConfigError, FitConfig, FittedBlock, fit_block, initialize_kernels
from .lm import LMConfig, lm_solve
from .registration import (
    Pose6D,
    RegistrationConfig,
    RegistrationResult,
    Setup,
    register,
    robust_weight,
    run_localization,
    trajectory_rmse,
)
from .serde import MapFormatError, load_map, save_map
from .sparse_map import MapConfig, SparseGmmMap, build_map, eval_reconstruction

__all__ = [
    "BACKEND",
    "ConfigError",
    "ESKF",
    "ExtremaSet",
    "FieldSample",
    "FitConfig",
    "FittedBlock",
    "GaussianKernel",
    "ImuSample",
    "LMConfig",
    "LocalEdtGrid",
    "MapConfig",
    "MapFormatError",
    "NoiseParams",
    "NominalState",
    "OccupancyGrid",
    "Pose6D",
    "RegistrationConfig",
    "RegistrationResult",
    "Setup",
    "SparseGmmMap",
    "StateHistory",
    "build_map",
    "deskew",
    "eval_kernel",
    "eval_kernel_gradient",
    "eval_mixture",
    "eval_reconstruction",
    "exact_edt",
    "find_extrema",
    "fit_block",
    "initialize_kernels",
    "lm_solve",
    "load_map",
    "pose_at",
    "predict",
    "register",
    "robust_weight",
    "run_localization",
    "save_map",
    "trajectory_rmse",
    "update_pose",
    "voxelize_region",
]
