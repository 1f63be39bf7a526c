"""Bayesian level-set reconstruction of piecewise-constant diffusion and
absorption from noisy boundary element data."""

from .experiment import (
    ExperimentConfig,
    PhantomSpec,
    build_phantom,
    noise_study,
    run_experiment,
    synthesize_data,
)
from .forward import ForwardModel, MeasurementSet, adjacent_patterns, measure, unit_patterns
from .inference import ChainConfig, PosteriorSamples, run_chain
from .mesh import Mesh, generate_disk_mesh, project_field, read_mesh, write_mesh
from .prior import LevelSetPair, LevelSpec, MaternParams, build_covariance, level_set_map
from .reconstruct import accuracy_ratio, linf_error, reconstruct

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "PhantomSpec",
    "build_phantom",
    "noise_study",
    "run_experiment",
    "synthesize_data",
    "ForwardModel",
    "MeasurementSet",
    "adjacent_patterns",
    "unit_patterns",
    "measure",
    "ChainConfig",
    "PosteriorSamples",
    "run_chain",
    "Mesh",
    "generate_disk_mesh",
    "project_field",
    "read_mesh",
    "write_mesh",
    "LevelSetPair",
    "LevelSpec",
    "MaternParams",
    "build_covariance",
    "level_set_map",
    "accuracy_ratio",
    "linf_error",
    "reconstruct",
]
