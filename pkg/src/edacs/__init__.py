"""Sparse decomposition of electrodermal activity into SCR events and baseline."""

from .coherence import CoherenceReport, coherence_params, sparsity_condition, sparsity_threshold
from .signals import (
    BaselineDiff,
    DifferencedConvolution,
    DimensionError,
    ImpulseResponse,
    ScrEvents,
    Signal,
    build_impulse_response,
    convolve,
    difference_apply,
    downsample,
    keep_largest,
)
from .solver import DecompositionResult, SolverConfig, kkt_report, solve, solve_differenced
from .synth import SynthConfig, SynthInstance, compose_observation, relative_error

__version__ = "0.1.0"

__all__ = [
    "BaselineDiff", "CoherenceReport", "DecompositionResult", "DifferencedConvolution", "DimensionError",
    "ImpulseResponse", "ScrEvents", "Signal", "SolverConfig", "SynthConfig", "SynthInstance",
    "build_impulse_response", "coherence_params", "compose_observation", "convolve", "difference_apply",
    "downsample", "keep_largest", "kkt_report", "relative_error", "solve", "solve_differenced",
    "sparsity_condition", "sparsity_threshold",
]
