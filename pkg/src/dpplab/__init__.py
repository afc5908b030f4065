"""Determinantal point process laboratory."""

from .core import (
    ContractViolation,
    NumericalContractError,
    PointConfiguration,
    RandomStream,
    Window,
    count,
    factorial_power,
)
from .kernels import (
    FourierBasis,
    LegendreBasis,
    SpectralDecomposition,
    decompose,
    gaussian_kernel,
    projection_kernel,
    rank_one_kernel,
    sine_kernel,
    spectral_kernel,
    thin,
    zero_kernel,
)
from .fredholm import fredholm_det, trace

__version__ = "0.1.0"
