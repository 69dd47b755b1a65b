"""Tensor arithmetic, tape autodiff, dense linear algebra and Adam."""

from . import autodiff as ad
from .autodiff import Tape, Var, value
from .gradcheck import GradCheckResult, grad_check
from .linalg import CholeskyError, cho_solve, cholesky, logdet_from_chol, tri_solve
from .optim import AdamState, adam_step

__all__ = [
    "ad",
    "Tape",
    "Var",
    "value",
    "grad_check",
    "GradCheckResult",
    "cholesky",
    "CholeskyError",
    "tri_solve",
    "cho_solve",
    "logdet_from_chol",
    "AdamState",
    "adam_step",
]
