"""Simulation and ergodicity certification for broadcast feedback loops of stochastic agents."""

from .agents import AffineAgent, FiniteActionAgent, LipschitzAgent, product_ifs
from .blocks import (
    LinearBlock,
    classify_stability,
    fir_filter,
    lag_controller,
    pi_controller,
    tf_to_ss,
)
from .config import ConfigError, load_config
from .core import ProbabilityFunction
from .ergodicity import (
    ErgodicityVerdict,
    certify_thm3_negative,
    certify_thm4_linear,
    certify_thm5_lipschitz,
    certify_thm6_finite,
)
from .loop import ClosedLoopSystem, SimState, monte_carlo, simulate_path

__version__ = "0.1.0"

__all__ = [
    "AffineAgent",
    "ClosedLoopSystem",
    "ConfigError",
    "ErgodicityVerdict",
    "FiniteActionAgent",
    "LinearBlock",
    "LipschitzAgent",
    "ProbabilityFunction",
    "SimState",
    "certify_thm3_negative",
    "certify_thm4_linear",
    "certify_thm5_lipschitz",
    "certify_thm6_finite",
    "classify_stability",
    "fir_filter",
    "lag_controller",
    "load_config",
    "monte_carlo",
    "pi_controller",
    "product_ifs",
    "simulate_path",
    "tf_to_ss",
]
