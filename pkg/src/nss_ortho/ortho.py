"""Orthogonal coordinates for the NSS inner linear problem.

The design matrix is factored as Phi = Psi R with an unpivoted Householder QR
whose triangular factor has a non-negative diagonal.  Fitting happens in the
orthonormal basis (gamma = Psi^T y); the classical coefficients are recovered
only on request via a triangular solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .core import ArrayOrDesign, DesignMatrix, MaturityGrid, as_array, design_matrix

_EPS = np.finfo(float).eps


class SingularRecoveryError(np.linalg.LinAlgError):
    """Back-transformation hit a zero diagonal entry of R."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"R[{index},{index}] = {value:.3e}; triangular block is singular")


@dataclass(frozen=True)
class OrthoFactorization:
    psi: np.ndarray
    r: np.ndarray
    degenerate: bool = False
    lam: Optional[tuple[float, float]] = None
    grid: Optional[MaturityGrid] = None

    @property
    def r44(self) -> float:
        return float(abs(self.r[3, 3]))

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(np.diag(self.r)))

    def active_columns(self) -> np.ndarray:
        """Boolean mask of columns with a non-zero diagonal in R."""
        return np.diag(self.r) != 0.0


@dataclass(frozen=True)
class InnerFit:
    gamma: np.ndarray
    p: int
    beta: Optional[np.ndarray]
    r44: float
    kappa: float
    fitted: np.ndarray
    residual_norm: float
    fact: OrthoFactorization

    @property
    def rss(self) -> float:
        return self.residual_norm ** 2


def _rank_tol(r: np.ndarray, m: int) -> float:
    return max(m, r.shape[0]) * _EPS * float(np.max(np.abs(np.diag(r))))


def _positive_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    psi, r = np.linalg.qr(a, mode="reduced")
    d = np.diag(r)
    signs = np.where(d < 0.0, -1.0, 1.0)
    psi = psi * signs
    r = r * signs[:, None]
    tol = _rank_tol(r, a.shape[0])
    dead = np.abs(np.diag(r)) <= tol
    if np.any(dead):
        idx = np.flatnonzero(dead)
        r[idx, idx] = 0.0
    return psi, r, bool(np.any(dead))


def thin_qr_positive(phi: ArrayOrDesign) -> OrthoFactorization:
    """Thin QR with R_jj >= 0; exact rank deficiency is flagged, not raised."""
    a = as_array(phi)
    if a.ndim != 2 or a.shape[1] != 4:
        raise ValueError(f"design matrix must be m x 4, got {a.shape}")
    if a.shape[0] < 4:
        raise ValueError(f"need at least 4 maturities for a thin QR, got {a.shape[0]}")
    psi, r, degenerate = _positive_qr(a)
    lam = grid = None
    if isinstance(phi, DesignMatrix):
        lam, grid = phi.lam, phi.grid
    return OrthoFactorization(psi, r, degenerate, lam, grid)


def orthogonal_fit(fact: OrthoFactorization, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != fact.psi.shape[0]:
        raise ValueError(f"y has length {y.shape[0]}, basis has {fact.psi.shape[0]} rows")
    return fact.psi.T @ y


def recover_beta(fact: OrthoFactorization, gamma, p: int = 4) -> np.ndarray:
    """Solve R beta = gamma (p=4) or the leading 3x3 block with beta_4 = 0 (p=3)."""
    if p not in (3, 4):
        raise ValueError(f"model order must be 3 or 4, got {p}")
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    block = fact.r[:p, :p]
    diag = np.diag(block)
    zero = np.flatnonzero(diag == 0.0)
    if zero.size:
        j = int(zero[0])
        raise SingularRecoveryError(j + 1, float(diag[j]))
    beta = np.zeros(4)
    beta[:p] = solve_triangular(block, gamma[:p], lower=False)
    return beta


def condition_number(phi: ArrayOrDesign) -> float:
    s = np.linalg.svd(as_array(phi), compute_uv=False)
    if s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])


def inner_step(
    grid: MaturityGrid,
    y,
    lam,
    sigma: float,
    delta: Optional[float] = None,
    *,
    want_beta: bool = True,
    model: str = "auto",
) -> InnerFit:
    """Orthogonal solve for fixed decay rates with the R44 model-order rule.

    ``model`` is ``"auto"`` (drop the fourth component when |R44| < sigma/delta),
    ``"ns"`` (always p=3) or ``"nss"`` (always p=4).  ``delta`` defaults to 10*sigma.
    """
    if not sigma > 0.0:
        raise ValueError("sigma must be > 0")
    if delta is None:
        delta = 10.0 * sigma
    if not delta > 0.0:
        raise ValueError("delta must be > 0")
    phi = design_matrix(grid, lam)
    fact = thin_qr_positive(phi)
    gamma = orthogonal_fit(fact, y)
    if model == "auto":
        p = 3 if fact.r44 < sigma / delta else 4
    elif model == "ns":
        p = 3
    elif model == "nss":
        p = 4
    else:
        raise ValueError(f"unknown model {model!r}")
    fitted = fact.psi[:, :p] @ gamma[:p]
    beta = recover_beta(fact, gamma, p) if want_beta else None
    resid = np.asarray(y, dtype=float) - fitted
    return InnerFit(
        gamma=gamma,
        p=p,
        beta=beta,
        r44=fact.r44,
        kappa=condition_number(phi),
        fitted=fitted,
        residual_norm=float(np.linalg.norm(resid)),
        fact=fact,
    )


def weighted_qr(phi: ArrayOrDesign, w) -> OrthoFactorization:
    """Factor diag(sqrt(w)) Phi; Psi is orthonormal in the weighted row space."""
    w = np.asarray(w, dtype=float).reshape(-1)
    a = as_array(phi)
    if w.shape[0] != a.shape[0]:
        raise ValueError("weight vector length must match the number of maturities")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise ValueError("weights must be finite and > 0")
    psi, r, degenerate = _positive_qr(np.sqrt(w)[:, None] * a)
    lam = grid = None
    if isinstance(phi, DesignMatrix):
        lam, grid = phi.lam, phi.grid
    return OrthoFactorization(psi, r, degenerate, lam, grid)


def weighted_fit(phi: ArrayOrDesign, y, w) -> tuple[np.ndarray, np.ndarray]:
    """Weighted least squares in orthogonal coordinates; returns (gamma_w, fitted curve)."""
    w = np.asarray(w, dtype=float).reshape(-1)
    fact = weighted_qr(phi, w)
    sw = np.sqrt(w)
    gamma = fact.psi.T @ (sw * np.asarray(y, dtype=float))
    return gamma, (fact.psi @ gamma) / sw
