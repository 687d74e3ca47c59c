"""Closed-form L2(0, T) Gram matrix of the NSS basis and the continuous orthonormal basis.

Entries reduce to exponentials, logarithms and the exponential integral E1;
the Cholesky factor L (G = L L^T) plays the role of R^T in the discrete QR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, basis_matrix
from .ortho import thin_qr_positive

EULER_GAMMA = 0.57721566490153286061

_E1_SERIES_MAX = 1.0
_CF_TINY = 1e-300


def _e1_series(x: float) -> float:
    # E1(x) = -gamma - ln x + sum_{k>=1} (-1)^{k+1} x^k / (k k!)
    total = 0.0
    term = 1.0
    k = 1
    while True:
        term *= -x / k
        contrib = -term / k
        total += contrib
        if abs(contrib) <= 1e-17 * abs(total):
            break
        k += 1
        if k > 500:
            break
    return -EULER_GAMMA - math.log(x) + total


def _e1_continued_fraction(x: float) -> float:
    # modified Lentz on e^{-x} / (x + 1 - 1^2/(x + 3 - 2^2/(x + 5 - ...)))
    b = x + 1.0
    c = 1.0 / _CF_TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) <= 1e-16:
            break
    return h * math.exp(-x)


def exp_integral_e1(x: float) -> float:
    """Exponential integral E1(x) = int_x^inf exp(-u)/u du for x > 0."""
    x = float(x)
    if not x > 0.0 or math.isnan(x):
        raise DomainError(f"E1 requires x > 0, got {x}")
    if math.isinf(x) or x > 745.0:
        return 0.0
    if x <= _E1_SERIES_MAX:
        return _e1_series(x)
    return _e1_continued_fraction(x)


def _check_pos(**vals: float) -> None:
    for name, v in vals.items():
        if not (v > 0.0 and math.isfinite(v)):
            raise DomainError(f"{name} must be finite and > 0, got {v}")


def integral_exp(a: float, T: float) -> float:
    """I_T(a) = int_0^T exp(-a t) dt."""
    return -math.expm1(-a * T) / a


def integral_h(a: float, T: float) -> float:
    """F_T(a) = int_0^T (1 - exp(-a t)) / (a t) dt."""
    return (EULER_GAMMA + math.log(a * T) + exp_integral_e1(a * T)) / a


def integral_h_exp(a: float, b: float, T: float) -> float:
    """FE_T(a, b) = int_0^T (1 - exp(-a t)) / (a t) * exp(-b t) dt."""
    return (math.log((a + b) / b) + exp_integral_e1((a + b) * T) - exp_integral_e1(b * T)) / a


def integral_hh(a: float, b: float, T: float) -> float:
    """K_T(a, b) = int_0^T (1 - exp(-a t)) / (a t) * (1 - exp(-b t)) / (b t) dt."""
    c = a + b
    boundary = math.expm1(-a * T) * math.expm1(-b * T) / T
    core = (
        a * math.log(c / a)
        + b * math.log(c / b)
        + c * exp_integral_e1(c * T)
        - a * exp_integral_e1(a * T)
        - b * exp_integral_e1(b * T)
    )
    return (core - boundary) / (a * b)


def helper_integrals(a: float, b: float, T: float) -> tuple[float, float, float, float]:
    """(I_T(a), F_T(a), FE_T(a, b), K_T(a, b))."""
    _check_pos(a=a, b=b, T=T)
    return integral_exp(a, T), integral_h(a, T), integral_h_exp(a, b, T), integral_hh(a, b, T)


@dataclass(frozen=True)
class GramMatrix:
    g: np.ndarray
    horizon: float
    lam: tuple[float, float]


@dataclass(frozen=True)
class ContinuousBasis:
    l: np.ndarray
    r_t: np.ndarray
    lam: tuple[float, float]
    horizon: float
    pivots: np.ndarray
    degenerate: bool

    @property
    def r44(self) -> float:
        return float(self.r_t[3, 3])

    def evaluate(self, taus) -> np.ndarray:
        """Orthonormal functions psi_T(tau) = L^{-1} phi(tau), one row per maturity."""
        if self.degenerate:
            raise np.linalg.LinAlgError("Gram matrix is singular; no orthonormal basis")
        phi = basis_matrix(taus, self.lam)
        return np.linalg.solve(self.l, phi.T).T


def gram_matrix(lam, T: float) -> GramMatrix:
    a, b = (float(v) for v in np.asarray(lam, dtype=float).reshape(2))
    T = float(T)
    _check_pos(lambda1=a, lambda2=b, T=T)
    Ia, Ib = integral_exp(a, T), integral_exp(b, T)
    Fa, Fb = integral_h(a, T), integral_h(b, T)
    Kaa, Kab, Kbb = integral_hh(a, a, T), integral_hh(a, b, T), integral_hh(b, b, T)
    FEaa, FEab = integral_h_exp(a, a, T), integral_h_exp(a, b, T)
    FEba, FEbb = integral_h_exp(b, a, T), integral_h_exp(b, b, T)

    g = np.empty((4, 4))
    g[0, 0] = T
    g[0, 1] = Fa
    g[0, 2] = Fa - Ia
    g[0, 3] = Fb - Ib
    g[1, 1] = Kaa
    g[1, 2] = Kaa - FEaa
    g[1, 3] = Kab - FEab
    g[2, 2] = Kaa - 2.0 * FEaa + integral_exp(2.0 * a, T)
    g[2, 3] = Kab - FEab - FEba + integral_exp(a + b, T)
    g[3, 3] = Kbb - 2.0 * FEbb + integral_exp(2.0 * b, T)
    iu = np.triu_indices(4, 1)
    g[(iu[1], iu[0])] = g[iu]
    return GramMatrix(g, T, (a, b))


def cholesky_with_pivots(g: np.ndarray, rel_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray, bool]:
    """Plain Cholesky reporting every pivot; pivots below rel_tol * max(diag) count as zero."""
    n = g.shape[0]
    l = np.zeros_like(g)
    pivots = np.zeros(n)
    tol = rel_tol * float(np.max(np.diag(g)))
    degenerate = False
    for j in range(n):
        piv = g[j, j] - l[j, :j] @ l[j, :j]
        pivots[j] = piv
        if piv <= tol:
            degenerate = True
            # remaining columns are left at zero
            break
        l[j, j] = math.sqrt(piv)
        for i in range(j + 1, n):
            l[i, j] = (g[i, j] - l[i, :j] @ l[j, :j]) / l[j, j]
    return l, pivots, degenerate


def continuous_basis(lam, T: float) -> ContinuousBasis:
    gm = gram_matrix(lam, T)
    l, pivots, degenerate = cholesky_with_pivots(gm.g)
    return ContinuousBasis(l, l.T.copy(), gm.lam, gm.horizon, pivots, degenerate)


def decaying_gram_infinite(lam) -> np.ndarray:
    """T -> infinity limit of the Gram block of (phi_2, phi_3, phi_4)."""
    a, b = (float(v) for v in np.asarray(lam, dtype=float).reshape(2))
    _check_pos(lambda1=a, lambda2=b)

    def i_inf(c: float) -> float:
        return 1.0 / c

    def fe_inf(p: float, q: float) -> float:
        return math.log((p + q) / q) / p

    def k_inf(p: float, q: float) -> float:
        return (p * math.log((p + q) / p) + q * math.log((p + q) / q)) / (p * q)

    g = np.empty((3, 3))
    g[0, 0] = k_inf(a, a)
    g[0, 1] = k_inf(a, a) - fe_inf(a, a)
    g[0, 2] = k_inf(a, b) - fe_inf(a, b)
    g[1, 1] = k_inf(a, a) - 2.0 * fe_inf(a, a) + i_inf(2.0 * a)
    g[1, 2] = k_inf(a, b) - fe_inf(a, b) - fe_inf(b, a) + i_inf(a + b)
    g[2, 2] = k_inf(b, b) - 2.0 * fe_inf(b, b) + i_inf(2.0 * b)
    g[1, 0], g[2, 0], g[2, 1] = g[0, 1], g[0, 2], g[1, 2]
    return g


def discrete_r44_refinement(lam, T: float, sizes=(25, 50, 100, 200, 400, 800)) -> np.ndarray:
    """R44 of the discrete QR on midpoint grids of (0, T], rows scaled by sqrt(dt).

    With that scaling Phi^T Phi approximates G_T, so the sequence approaches the
    continuous (R_T)_44 as the grid refines.
    """
    out = []
    for n in sizes:
        dt = T / n
        taus = (np.arange(n) + 0.5) * dt
        phi = basis_matrix(taus, lam) * math.sqrt(dt)
        out.append(thin_qr_positive(phi).r[3, 3])
    return np.asarray(out)
