"""Heterogeneous cortical operators, gradient-flow reconstruction, Green
functions and a stochastic homogenization lab on uniform 2-D grids."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    CorticalError,
    DegenerateCoefficientError,
    DegenerateLevelError,
    DomainError,
    GeometryError,
    ImageIOError,
    InstabilityError,
)
from .grid import GridGeometry, ScalarField, StencilVector, l2_norm, mesh_completion, sobolev_seminorm
from .orientation import OrientationMap, PinwheelParams, binary_hv_map, constant_map, pinwheel_map, salt_pepper_map
from .operators import (
    CoefficientField,
    GaussianParams,
    HeterogeneousOperator,
    OperatorSpec,
    apply,
    energy,
    forward_output,
    homogeneous_laplacian,
)
from .solver import SolveReport, SolverConfig, default_dt, reconstruct, solve, stable_dt
from .green import GreenFunction, anisotropy_ratio, green
from .homogenization import (
    HomogenizationReport,
    KappaField,
    TransitionOperator,
    h_convergence_experiment,
    sample_kappa,
    solve_mean_value_dirichlet,
    transition_functions,
    validate_mean_value,
)
from .imaging import RgbImage, load_image, make_simultaneous_contrast, reconstruct_rgb, save_image

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "CorticalError",
    "DegenerateCoefficientError",
    "DegenerateLevelError",
    "DomainError",
    "GeometryError",
    "ImageIOError",
    "InstabilityError",
    "GridGeometry",
    "ScalarField",
    "StencilVector",
    "l2_norm",
    "mesh_completion",
    "sobolev_seminorm",
    "OrientationMap",
    "PinwheelParams",
    "binary_hv_map",
    "constant_map",
    "pinwheel_map",
    "salt_pepper_map",
    "CoefficientField",
    "GaussianParams",
    "HeterogeneousOperator",
    "OperatorSpec",
    "apply",
    "energy",
    "forward_output",
    "homogeneous_laplacian",
    "SolveReport",
    "SolverConfig",
    "default_dt",
    "reconstruct",
    "solve",
    "stable_dt",
    "GreenFunction",
    "anisotropy_ratio",
    "green",
    "HomogenizationReport",
    "KappaField",
    "TransitionOperator",
    "h_convergence_experiment",
    "sample_kappa",
    "solve_mean_value_dirichlet",
    "transition_functions",
    "validate_mean_value",
    "RgbImage",
    "load_image",
    "make_simultaneous_contrast",
    "reconstruct_rgb",
    "save_image",
]
