"""Minimal reverse-mode differentiation for the readmission model."""
from .check import GradCheckReport, grad_check
from .optim import Adam, AdamState, adam_step
from .tape import Tape, Tensor, as_tensor

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckReport",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "grad_check",
]
