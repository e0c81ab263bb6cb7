"""bvflow: exact-arithmetic workbench for finite-dimensional BV algebra,
homotopic renormalization-group flow, and related desk-scale computations."""

from bvflow.graded import (
    DgSpace,
    Functional,
    Kernel2,
    apply_Q,
    contract,
    is_plus,
    koszul_sign,
    mul,
)

__all__ = [
    "DgSpace",
    "Functional",
    "Kernel2",
    "apply_Q",
    "contract",
    "is_plus",
    "koszul_sign",
    "mul",
]

__version__ = "0.1.0"
