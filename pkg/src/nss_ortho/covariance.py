"""Conditional and first-order joint covariances in classical and orthogonal coordinates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .core import ArrayOrDesign, MaturityGrid, as_array, basis_derivatives, basis_matrix
from .ortho import OrthoFactorization, thin_qr_positive


class WeakIdentificationError(np.linalg.LinAlgError):
    """The projected decay-rate sensitivity S is (numerically) singular."""

    def __init__(self, cond_s: float):
        self.cond_s = cond_s
        super().__init__(f"Schur complement S is singular (cond(S) = {cond_s:.3e})")


class StepValidityError(ValueError):
    """Finite-difference step would straddle the degenerate manifold lambda_1 = lambda_2."""


@dataclass(frozen=True)
class ConditionalCovariance:
    cov: np.ndarray
    corr: np.ndarray
    max_abs_corr: float
    degenerate: bool = False

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass(frozen=True)
class JointCovariance:
    cov_gamma: np.ndarray
    cov_lambda: np.ndarray
    cross: np.ndarray
    s: np.ndarray
    c: np.ndarray

    def full(self) -> np.ndarray:
        """The assembled 6 x 6 covariance of (gamma, lambda)."""
        return np.block([[self.cov_gamma, self.cross], [self.cross.T, self.cov_lambda]])


@dataclass(frozen=True)
class BetaCovariance:
    cov_beta: np.ndarray
    jacobian: np.ndarray
    warning: Optional[str] = None

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_beta), 0.0, None))


def correlation(cov: np.ndarray) -> tuple[np.ndarray, float]:
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    off = np.abs(corr - np.diag(np.diag(corr)))
    return corr, float(off.max())


def conditional_beta_cov(phi: ArrayOrDesign, sigma: float) -> ConditionalCovariance:
    """sigma^2 (Phi^T Phi)^{-1} evaluated as sigma^2 R^{-1} R^{-T}."""
    fact = phi if isinstance(phi, OrthoFactorization) else thin_qr_positive(phi)
    if fact.degenerate:
        nan = np.full((4, 4), np.nan)
        return ConditionalCovariance(nan, nan.copy(), float("nan"), degenerate=True)
    rinv = solve_triangular(fact.r, np.eye(4), lower=False)
    cov = sigma ** 2 * rinv @ rinv.T
    corr, mx = correlation(cov)
    return ConditionalCovariance(cov, corr, mx)


def qr_differential(fact: OrthoFactorization, dphi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First-order change (dPsi, dR) of the sign-fixed thin QR for a perturbation dPhi.

    Uses Psi^T dPhi R^{-1} = Omega + dR R^{-1} with Omega = Psi^T dPsi skew-symmetric
    and dR R^{-1} upper triangular.
    """
    psi, r = fact.psi, fact.r
    dphi_rinv = solve_triangular(r, dphi.T, lower=False, trans="T").T
    x = psi.T @ dphi_rinv
    low = np.tril(x, -1)
    omega = low - low.T
    dr = (x - omega) @ r
    dpsi = dphi_rinv - psi @ (psi.T @ dphi_rinv) + psi @ omega
    return dpsi, dr


def _fd_steps(lam: np.ndarray, step: Optional[float]) -> np.ndarray:
    if step is not None:
        return np.array([step, step], dtype=float)
    return 1e-6 * np.maximum(lam, 1.0)


def _check_steps(lam: np.ndarray, h: np.ndarray) -> None:
    gap = abs(lam[0] - lam[1])
    if gap < 10.0 * float(h.max()):
        raise StepValidityError(
            f"|lambda_1 - lambda_2| = {gap:.3e} is within 10 finite-difference steps ({h.max():.1e})"
        )


def _grid_taus(grid) -> np.ndarray:
    return grid.array() if isinstance(grid, MaturityGrid) else np.asarray(grid, dtype=float)


def nonlinear_sensitivities(
    lam,
    gamma,
    grid,
    method: str = "analytic",
    step: Optional[float] = None,
) -> np.ndarray:
    """G = [d(Psi gamma)/d lambda_1, d(Psi gamma)/d lambda_2] at fixed gamma (m x 2)."""
    lam = np.asarray(lam, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    taus = _grid_taus(grid)
    if method == "analytic":
        fact = thin_qr_positive(basis_matrix(taus, lam))
        if fact.degenerate:
            raise StepValidityError("design matrix is rank deficient; Psi is not differentiable here")
        cols = []
        for dphi in basis_derivatives(taus, lam):
            dpsi, _ = qr_differential(fact, dphi)
            cols.append(dpsi @ gamma)
        return np.column_stack(cols)
    if method == "finite_difference":
        h = _fd_steps(lam, step)
        _check_steps(lam, h)
        cols = []
        for j in range(2):
            e = np.zeros(2)
            e[j] = h[j]
            up = thin_qr_positive(basis_matrix(taus, lam + e)).psi @ gamma
            dn = thin_qr_positive(basis_matrix(taus, lam - e)).psi @ gamma
            cols.append((up - dn) / (2.0 * h[j]))
        return np.column_stack(cols)
    raise ValueError(f"unknown sensitivity method {method!r}")


def r_derivatives(lam, grid, method: str = "analytic", step: Optional[float] = None):
    """(dR/dlambda_1, dR/dlambda_2) of the sign-fixed QR factor."""
    lam = np.asarray(lam, dtype=float)
    taus = _grid_taus(grid)
    if method == "analytic":
        fact = thin_qr_positive(basis_matrix(taus, lam))
        return tuple(qr_differential(fact, d)[1] for d in basis_derivatives(taus, lam))
    if method == "finite_difference":
        h = _fd_steps(lam, step)
        _check_steps(lam, h)
        out = []
        for j in range(2):
            e = np.zeros(2)
            e[j] = h[j]
            up = thin_qr_positive(basis_matrix(taus, lam + e)).r
            dn = thin_qr_positive(basis_matrix(taus, lam - e)).r
            out.append((up - dn) / (2.0 * h[j]))
        return tuple(out)
    raise ValueError(f"unknown derivative method {method!r}")


def full_covariance(fact: OrthoFactorization, g: np.ndarray, sigma: float) -> JointCovariance:
    """Gauss-Newton covariance of (gamma, lambda) via the Schur complement S = G^T (I - Psi Psi^T) G."""
    psi = fact.psi
    g = np.asarray(g, dtype=float)
    c = psi.T @ g
    # projected form avoids cancellation in M - C^T C
    g_perp = g - psi @ c
    s = g_perp.T @ g_perp
    cond_s = np.linalg.cond(s)
    if not np.isfinite(cond_s) or cond_s > 1.0 / np.finfo(float).eps:
        raise WeakIdentificationError(float(cond_s))
    s_inv = np.linalg.inv(s)
    s_inv = 0.5 * (s_inv + s_inv.T)
    sig2 = sigma ** 2
    cs = c @ s_inv
    return JointCovariance(
        cov_gamma=sig2 * (np.eye(4) + cs @ c.T),
        cov_lambda=sig2 * s_inv,
        cross=-sig2 * cs,
        s=s,
        c=c,
    )


def beta_cov_delta(
    fact: OrthoFactorization,
    lam,
    beta,
    joint: JointCovariance,
    rdot_method: str = "analytic",
    grid=None,
) -> BetaCovariance:
    """Delta-method covariance of beta = R(lambda)^{-1} gamma.

    The Jacobian is [R^{-1}, -R^{-1} Rdot_1 beta, -R^{-1} Rdot_2 beta].
    """
    grid = grid if grid is not None else fact.grid
    if grid is None:
        raise ValueError("a maturity grid is needed to differentiate R")
    beta = np.asarray(beta, dtype=float)
    r = fact.r
    if fact.degenerate:
        raise np.linalg.LinAlgError("R is singular; classical parameters are not recoverable")
    rinv = solve_triangular(r, np.eye(4), lower=False)
    rdot1, rdot2 = r_derivatives(lam, grid, rdot_method)
    jac = np.column_stack([rinv, -rinv @ (rdot1 @ beta), -rinv @ (rdot2 @ beta)])
    cov = jac @ joint.full() @ jac.T
    cov = 0.5 * (cov + cov.T)
    message = None
    cond_r = np.linalg.cond(r)
    if cond_r > 1e8:
        message = f"R is near-singular (cond(R) = {cond_r:.2e}); recovered beta covariance is unreliable"
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    return BetaCovariance(cov, jac, message)
