"""Local structural identifiability via the rank of the m x 6 sensitivity matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import NssParams, basis_derivatives, basis_matrix

PARAM_LABELS = ("beta1", "beta2", "beta3", "beta4", "lambda1", "lambda2")
DEGENERATE_LABELS = ("beta1", "beta2", "beta3+beta4", "lambda")


@dataclass(frozen=True)
class IdentifiabilityReport:
    jacobian: np.ndarray
    rank: int
    singular_values: np.ndarray
    null_basis: tuple[np.ndarray, ...]
    identifiable_quantities: tuple[str, ...]
    tol: float

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "deficiency": 6 - self.rank,
            "tol": self.tol,
            "singular_values": self.singular_values.tolist(),
            "null_basis": [v.tolist() for v in self.null_basis],
            "identifiable_quantities": list(self.identifiable_quantities),
        }


def jacobian(params: NssParams, grid) -> np.ndarray:
    """Columns dy/dbeta_1..4 (the design matrix) and dy/dlambda_1, dy/dlambda_2."""
    lam = params.lam_array
    beta = params.beta_array
    phi = basis_matrix(grid, lam)
    d1, d2 = basis_derivatives(grid, lam)
    return np.column_stack([phi, d1 @ beta, d2 @ beta])


def rank_analysis(params: NssParams, grid, tol: float = 1e-9) -> IdentifiabilityReport:
    """SVD rank of J with threshold tol * sigma_max; null space from trailing singular vectors."""
    j = jacobian(params, grid)
    _, s, vt = np.linalg.svd(j, full_matrices=True)
    sv = np.zeros(6)
    sv[: s.size] = s
    rank = int(np.count_nonzero(sv > tol * sv[0])) if sv[0] > 0 else 0
    null = tuple(vt[i].copy() for i in range(rank, 6))
    l1, l2 = params.lam
    if rank == 6:
        labels = PARAM_LABELS
    elif rank == 4 and l1 == l2:
        labels = DEGENERATE_LABELS
    else:
        labels = ()
    return IdentifiabilityReport(j, rank, sv, null, labels, tol)


def null_residual(report: IdentifiabilityReport, v) -> float:
    """||J v|| / ||J||_2 for a unit direction v in parameter space."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    return float(np.linalg.norm(report.jacobian @ v) / report.singular_values[0])


def sensitivity_functions(lam, taus) -> np.ndarray:
    """The eight functions 1, tau, tau^k e^{-lambda_i tau} (k = 0, 1, 2) sampled at ``taus``."""
    t = np.asarray(taus, dtype=float)
    l1, l2 = (float(v) for v in np.asarray(lam, dtype=float).reshape(2))
    e1, e2 = np.exp(-l1 * t), np.exp(-l2 * t)
    return np.column_stack([np.ones_like(t), t, e1, t * e1, t * t * e1, e2, t * e2, t * t * e2])


def sensitivity_basis_gram(lam, grid_dense: Optional[np.ndarray] = None) -> tuple[np.ndarray, float]:
    """Gram matrix of the eight column-normalized sensitivity functions and its minimum eigenvalue.

    Normalizing each column to unit length puts the diagonal at 1, so the
    minimum eigenvalue is a scale-free measure of linear independence.
    """
    if grid_dense is None:
        grid_dense = np.linspace(0.1, 30.0, 300)
    f = sensitivity_functions(lam, grid_dense)
    f = f / np.linalg.norm(f, axis=0)
    g = f.T @ f
    g = 0.5 * (g + g.T)
    return g, float(np.linalg.eigvalsh(g)[0])
