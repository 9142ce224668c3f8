"""Photon-counting statistics and heralding analysis for fluorescence-based
entanglement of two distant two-level emitters."""

__version__ = "0.1.0"

from .counting import (
    CountingStats,
    counting_series,
    counting_stats,
    mandel_q,
    mean_general,
    mean_longtime,
    variance,
)
from .dynamics import BlochState, DriveParams, evolve_bloch, steady_state
from .network import DetectionModel, JointSpinState, ModeNetwork, build_network, default_network
from .protocol import (
    ClassificationReport,
    ExperimentPreset,
    avg_entanglement_time,
    calibrate_kappa,
    classify,
    ideal_success_probability,
    load_preset,
    mismatch_analysis,
)

__all__ = [
    "BlochState",
    "ClassificationReport",
    "CountingStats",
    "DetectionModel",
    "DriveParams",
    "ExperimentPreset",
    "JointSpinState",
    "ModeNetwork",
    "avg_entanglement_time",
    "build_network",
    "calibrate_kappa",
    "classify",
    "counting_series",
    "counting_stats",
    "evolve_bloch",
    "ideal_success_probability",
    "load_preset",
    "mandel_q",
    "mean_general",
    "mean_longtime",
    "mismatch_analysis",
    "default_network",
    "steady_state",
    "variance",
]
