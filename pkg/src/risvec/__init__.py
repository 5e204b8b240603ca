"""RIS-assisted vehicular edge computing: BCD phase optimization and
multi-agent power allocation."""

__version__ = "0.1.0"

from .channel import (
    ChannelParams,
    PhaseShiftMatrix,
    SystemGeometry,
    composite_gain,
    los_steering,
    ris_bs_gain,
    snr,
    vu_ris_gain,
)
from .env import EnvConfig, VECEnv
from .phase_opt import BCDPhaseOptimizer, bcd_optimize, brute_force_optimize
from .marl import ModifiedMADDPG, TrainConfig
from .baselines import CentralizedDDPG, RandomPowerPolicy

__all__ = [
    "BCDPhaseOptimizer",
    "CentralizedDDPG",
    "ChannelParams",
    "EnvConfig",
    "ModifiedMADDPG",
    "PhaseShiftMatrix",
    "RandomPowerPolicy",
    "SystemGeometry",
    "TrainConfig",
    "VECEnv",
    "bcd_optimize",
    "brute_force_optimize",
    "composite_gain",
    "los_steering",
    "ris_bs_gain",
    "snr",
    "vu_ris_gain",
]
