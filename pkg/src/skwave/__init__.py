"""Spectral Galerkin toolkit for stochastic wave and heat equations."""

from .coefficients import (
    HolderDrift,
    HolderMultiplier,
    LipschitzApprox,
    apply_drift,
    apply_multiplier,
    inverse_multiplier,
    mollify_1d,
    ravsky_approximate,
)
from .modes import (
    ModePropagator,
    StepKernel,
    bound_oracle,
    heat_kernel,
    mode_limit_gap,
    operator_norm_check,
    propagate,
    step_kernel,
)
from .noise import NoiseStream
from .simulate import (
    CoupledRun,
    PhaseState,
    SimConfig,
    SimulationError,
    simulate_controlled_pair,
    simulate_heat,
    simulate_wave,
    stochastic_convolution,
)
from .spectral import ModeVector, NormSpec, SpectralOperator, make_operator, norm, to_physical, to_spectral

__version__ = "0.1.0"
