"""Parametric reduced-order modeling toolkit.

Learns low-dimensional latent dynamics of parameterized PDE solution fields
with a Taylor-rollout network trio, identifies the governing latent ODEs,
interpolates their coefficients across parameter space, and reconstructs
fields mesh-free at arbitrary coordinates. Includes a 2D viscous Burgers
solver for end-to-end data generation, training and evaluation, plus a
FastAPI service and a thin CLI client.
"""

__version__ = "0.1.0"

from .burgers import BurgersConfig, Grid, initial_field, make_grid, simulate, step_implicit
from .dataio import (
    DatasetArchive,
    FieldTrajectory,
    ModelBundle,
    bundle_from_result,
    ingest_external,
    load_bundle,
    load_dataset,
    sample_parameters,
    save_bundle,
    save_dataset,
)
from .idmodel import IDModel, LibrarySpec, fit_coefficients_least_squares, library_matrix, solve_latent_ode
from .interp import KnnConfig, idw_weights, interpolate_coefficients, parameter_distance
from .networks import ArchitectureSpec, LayerSpec, build_networks, burgers_architecture
from .online import EvaluationReport, PredictionRequest, evaluate_testset, l2_rate, predict
from .training import Normalizer, TrainingConfig, lr_schedule, train

__all__ = [
    "__version__",
    "ArchitectureSpec",
    "BurgersConfig",
    "DatasetArchive",
    "EvaluationReport",
    "FieldTrajectory",
    "Grid",
    "IDModel",
    "KnnConfig",
    "LayerSpec",
    "LibrarySpec",
    "ModelBundle",
    "Normalizer",
    "PredictionRequest",
    "TrainingConfig",
    "build_networks",
    "bundle_from_result",
    "burgers_architecture",
    "evaluate_testset",
    "fit_coefficients_least_squares",
    "idw_weights",
    "ingest_external",
    "initial_field",
    "interpolate_coefficients",
    "l2_rate",
    "library_matrix",
    "load_bundle",
    "load_dataset",
    "lr_schedule",
    "make_grid",
    "parameter_distance",
    "predict",
    "sample_parameters",
    "save_bundle",
    "save_dataset",
    "simulate",
    "solve_latent_ode",
    "step_implicit",
    "train",
]
