"""Learn PDE dynamics from scattered measurements with RBF collocation and neural operators."""

from .errors import NumericalError, SolverError, ValidationError
from .geometry import Domain, SiteSet, contains, boundary_distance, eval_grid, select_sites
from .rbf import RbfKernel, assemble_phi, solve_coefficients
from .operator import OperatorModel, assemble_d_tensor, build_h_matrix, forecast, spectral_radius, temporal_update
from .training import TrainConfig, load_checkpoint, save_checkpoint, sequence_loss, train
from .datagen import GenerateConfig, generate_dataset, read_dataset, write_dataset
from .evaluation import ExperimentConfig, persistence_forecast, run_experiment, snr, stability_report

__version__ = "0.1.0"

__all__ = [
    "NumericalError", "SolverError", "ValidationError",
    "Domain", "SiteSet", "contains", "boundary_distance", "eval_grid", "select_sites",
    "RbfKernel", "assemble_phi", "solve_coefficients",
    "OperatorModel", "assemble_d_tensor", "build_h_matrix", "forecast", "spectral_radius", "temporal_update",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "sequence_loss", "train",
    "GenerateConfig", "generate_dataset", "read_dataset", "write_dataset",
    "ExperimentConfig", "persistence_forecast", "run_experiment", "snr", "stability_report",
]
