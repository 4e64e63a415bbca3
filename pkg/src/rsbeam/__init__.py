"""Robust max-min beamforming and rate-splitting for downlink MISO xURLLC.

Designs common/private transmit beamformers and a rate-split vector that
maximize the minimum user rate in the finite-blocklength regime, robustly
over norm-bounded channel uncertainty.  The pipeline lifts beamformers to
positive-semidefinite matrices, converts the robust quadratic constraints
to linear matrix inequalities, and ascends with a concave-convex procedure;
rank-one solutions are recovered by eigen-extraction or Gaussian
randomization.
"""

from rsbeam.core import (
    BeamformerSet,
    ChannelSet,
    ConfigError,
    LiftedSolution,
    SchemeResult,
    SystemConfig,
    dbm_to_mw,
    effective_radius,
    validate_config,
)
from rsbeam.fbl_math import (
    FblPenalty,
    SeriesNonConvergence,
    dispersion,
    fbl_rate,
    q_inv,
    stationary_point,
    target_sinr_bisect,
    target_sinr_series,
)

__all__ = [
    "BeamformerSet",
    "ChannelSet",
    "ConfigError",
    "FblPenalty",
    "LiftedSolution",
    "SchemeResult",
    "SeriesNonConvergence",
    "SystemConfig",
    "dbm_to_mw",
    "dispersion",
    "effective_radius",
    "fbl_rate",
    "q_inv",
    "stationary_point",
    "target_sinr_bisect",
    "target_sinr_series",
    "validate_config",
]

__version__ = "0.1.0"
