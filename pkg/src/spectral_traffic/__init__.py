"""Trajectory and behavior prediction from the spectra of accumulated traffic graphs."""

from .behavior import Behavior, BehaviorThresholds, classify, theta_rate, weighted_accuracy
from .dgg import EdgeWeightParams, LaplacianState, Spectrum, build_adjacency, eigendecompose, update_laplacian
from .forecast import ForecastConfig, ade, evaluate, fde
from .spectral import perturbation_bound, phi_estimate, spectral_cluster, t_fde
from .traffic_data import Scene, TrainingWindow, WindowSpec, extract_windows, parse_csv

__all__ = [
    "Behavior",
    "BehaviorThresholds",
    "EdgeWeightParams",
    "ForecastConfig",
    "LaplacianState",
    "Scene",
    "Spectrum",
    "TrainingWindow",
    "WindowSpec",
    "ade",
    "build_adjacency",
    "classify",
    "eigendecompose",
    "evaluate",
    "extract_windows",
    "fde",
    "parse_csv",
    "perturbation_bound",
    "phi_estimate",
    "spectral_cluster",
    "t_fde",
    "theta_rate",
    "update_laplacian",
    "weighted_accuracy",
]
