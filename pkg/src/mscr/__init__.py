"""Masked multi-scale restoration for ECG anomaly detection."""

from .autodiff import (
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    backward,
    grad_check,
    no_grad,
)

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DimensionError",
    "NumericError",
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "__version__",
]
