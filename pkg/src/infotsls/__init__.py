"""Simulate randomized information experiments, fit their TSLS specifications and
diagnose the implied agent weights."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .actions import AffineInFeature, BinaryLatent, Link, MonotoneLink, Polynomial
from .beliefs import (
    Anchored,
    Bayesian,
    Drift,
    Feature,
    GaussianBelief,
    Grether,
    GridBelief,
    NoUpdate,
    SignalFamily,
)
from .diagnostics import (
    bin_contribution_characterization,
    bin_weight_characterization,
    panel_estimand,
    population_weights_active,
    population_weights_passive,
    verify_weight_characterization,
)
from .estimators import (
    active_tsls,
    aggregate_pairs,
    build_interaction,
    conditional_tsls,
    elasticity_tsls,
    passive_tsls,
)
from .experiment import Active, Agent, Design, Passive, assign_groups, simulate
from .linalg import DesignMatrix, TSLSFit, ols, tsls

__all__ = [
    "BACKEND",
    "AffineInFeature", "BinaryLatent", "Link", "MonotoneLink", "Polynomial",
    "Anchored", "Bayesian", "Drift", "Feature", "GaussianBelief", "Grether", "GridBelief",
    "NoUpdate", "SignalFamily",
    "bin_contribution_characterization", "bin_weight_characterization", "panel_estimand",
    "population_weights_active", "population_weights_passive", "verify_weight_characterization",
    "active_tsls", "aggregate_pairs", "build_interaction", "conditional_tsls", "elasticity_tsls",
    "passive_tsls",
    "Active", "Agent", "Design", "Passive", "assign_groups", "simulate",
    "DesignMatrix", "TSLSFit", "ols", "tsls",
]
