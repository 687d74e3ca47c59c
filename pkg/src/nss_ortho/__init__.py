"""Nelson-Siegel-Svensson curves in orthogonal (thin-QR) coordinates.

The public surface re-exports the pieces most callers need; the submodules
hold the rest.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .core import (
    DomainError,
    MaturityGrid,
    NssParams,
    basis_matrix,
    curve_eval,
    design_matrix,
    us_grid,
)
from .ortho import InnerFit, OrthoFactorization, SingularRecoveryError, inner_step, recover_beta, thin_qr_positive
from .varpro import FullFit, LambdaBox, OuterConfig, fit_global, fit_warm, reduced_objective

__all__ = [
    "DomainError",
    "FullFit",
    "InnerFit",
    "LambdaBox",
    "MaturityGrid",
    "NssParams",
    "OrthoFactorization",
    "OuterConfig",
    "SingularRecoveryError",
    "basis_matrix",
    "curve_eval",
    "design_matrix",
    "fit_global",
    "fit_warm",
    "inner_step",
    "recover_beta",
    "reduced_objective",
    "thin_qr_positive",
    "us_grid",
]
