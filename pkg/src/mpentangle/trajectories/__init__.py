"""Quantum-jump Monte Carlo oracle for the detector counting statistics."""
from .channels import CATEGORY_NAMES, Channel, JumpChannelSet, jump_channels
from .simulate import (
    TrajectoryEnsemble,
    compiled_available,
    default_backend,
    simulate,
    thin,
    trajectory_seed,
)
from .stats import EmpiricalDistribution, empirical_distribution, poisson_chisquare

__all__ = [
    "CATEGORY_NAMES",
    "Channel",
    "EmpiricalDistribution",
    "JumpChannelSet",
    "TrajectoryEnsemble",
    "compiled_available",
    "default_backend",
    "empirical_distribution",
    "jump_channels",
    "poisson_chisquare",
    "simulate",
    "thin",
    "trajectory_seed",
]
