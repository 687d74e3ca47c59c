"""Nelson-Siegel-Svensson basis functions, design matrices and curve evaluation.

Yields are decimal (0.04 == 4%), maturities are in years and decay rates in
1/years throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

# month tenors as exact fractions of 12
US_GRID_12 = (1 / 12, 2 / 12, 3 / 12, 6 / 12, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0, 30.0)

TENOR_YEARS = {
    "1M": 1 / 12,
    "2M": 2 / 12,
    "3M": 3 / 12,
    "4M": 4 / 12,
    "6M": 6 / 12,
    "1Y": 1.0,
    "2Y": 2.0,
    "3Y": 3.0,
    "5Y": 5.0,
    "7Y": 7.0,
    "10Y": 10.0,
    "20Y": 20.0,
    "30Y": 30.0,
}

REDUCED_9_TENORS = ("3M", "6M", "1Y", "2Y", "3Y", "5Y", "7Y", "10Y", "30Y")

_SMALL_X = 1e-4


class DomainError(ValueError):
    """Raised for non-positive maturities or decay rates."""


@dataclass(frozen=True)
class MaturityGrid:
    taus: tuple[float, ...]

    def __post_init__(self) -> None:
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        if len(taus) < 1:
            raise DomainError("maturity grid must contain at least one maturity")
        if not all(math.isfinite(t) for t in taus) or taus[0] <= 0.0:
            raise DomainError("maturities must be finite and > 0")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise DomainError("maturities must be strictly increasing")

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "MaturityGrid":
        try:
            return cls(tuple(TENOR_YEARS[lab.strip().upper()] for lab in labels))
        except KeyError as exc:
            raise DomainError(f"unknown tenor label {exc.args[0]!r}") from None

    @property
    def m(self) -> int:
        return len(self.taus)

    @property
    def horizon(self) -> float:
        return self.taus[-1]

    def array(self) -> np.ndarray:
        return np.asarray(self.taus, dtype=float)

    def __len__(self) -> int:
        return len(self.taus)


def us_grid() -> MaturityGrid:
    """The 12-tenor US Treasury grid 1M..30Y."""
    return MaturityGrid(US_GRID_12)


def _check_lambda(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (2,):
        raise DomainError(f"lambda must have two components, got shape {lam.shape}")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
        raise DomainError(f"decay rates must be finite and > 0, got {lam.tolist()}")
    return lam


@dataclass(frozen=True)
class NssParams:
    beta: tuple[float, float, float, float]
    lam: tuple[float, float]

    def __post_init__(self) -> None:
        beta = tuple(float(b) for b in np.asarray(self.beta, dtype=float).reshape(-1))
        if len(beta) != 4:
            raise DomainError("beta must have four components")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lam", tuple(_check_lambda(self.lam).tolist()))

    @property
    def beta_array(self) -> np.ndarray:
        return np.asarray(self.beta)

    @property
    def lam_array(self) -> np.ndarray:
        return np.asarray(self.lam)


def _h(x: np.ndarray) -> np.ndarray:
    """(1 - exp(-x)) / x, with a series branch below the cancellation threshold."""
    x = np.asarray(x, dtype=float)
    small = x < _SMALL_X
    safe = np.where(small, 1.0, x)
    out = -np.expm1(-safe) / safe
    series = 1.0 - x / 2.0 + x * x / 6.0 - x ** 3 / 24.0
    return np.where(small, series, out)


def _dh(x: np.ndarray) -> np.ndarray:
    """Derivative of (1 - exp(-x)) / x with respect to x."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    safe = np.where(small, 1.0, x)
    e = np.exp(-safe)
    out = (safe * e + np.expm1(-safe)) / (safe * safe)
    series = -0.5 + x / 3.0 - x * x / 8.0 + x ** 3 / 30.0 - x ** 4 / 144.0
    return np.where(small, series, out)


def basis_value(j: int, lam, tau: float) -> float:
    """Value of the j-th basis function (1-based) at maturity ``tau``."""
    if j not in (1, 2, 3, 4):
        raise DomainError(f"basis index must be 1..4, got {j}")
    lam = _check_lambda(lam)
    tau = float(tau)
    if not tau > 0.0:
        raise DomainError(f"maturity must be > 0, got {tau}")
    if j == 1:
        return 1.0
    rate = lam[0] if j in (2, 3) else lam[1]
    x = rate * tau
    h = float(_h(x))
    if j == 2:
        return h
    return h - math.exp(-x)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    grid: MaturityGrid
    lam: tuple[float, float]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


ArrayOrDesign = Union[np.ndarray, DesignMatrix]


def as_array(phi: ArrayOrDesign) -> np.ndarray:
    if isinstance(phi, DesignMatrix):
        return phi.values
    return np.asarray(phi, dtype=float)


def _grid_array(grid) -> np.ndarray:
    if isinstance(grid, MaturityGrid):
        return grid.array()
    taus = np.asarray(grid, dtype=float).reshape(-1)
    if taus.size == 0 or np.any(taus <= 0.0) or not np.all(np.isfinite(taus)):
        raise DomainError("maturities must be finite and > 0")
    return taus


def basis_matrix(taus, lam) -> np.ndarray:
    """Raw m x 4 basis matrix for arbitrary positive maturities (no ordering check)."""
    lam = _check_lambda(lam)
    t = _grid_array(taus)
    x1 = lam[0] * t
    x2 = lam[1] * t
    h1 = _h(x1)
    h2 = _h(x2)
    return np.column_stack([np.ones_like(t), h1, h1 - np.exp(-x1), h2 - np.exp(-x2)])


def design_matrix(grid: MaturityGrid, lam) -> DesignMatrix:
    lam = _check_lambda(lam)
    if not isinstance(grid, MaturityGrid):
        grid = MaturityGrid(tuple(np.asarray(grid, dtype=float).reshape(-1)))
    values = basis_matrix(grid.array(), lam)
    values.setflags(write=False)
    return DesignMatrix(values, grid, (float(lam[0]), float(lam[1])))


def basis_derivatives(taus, lam) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form derivatives dPhi/dlambda_1 and dPhi/dlambda_2 (each m x 4).

    Only columns 2-3 depend on lambda_1 and only column 4 on lambda_2.
    """
    lam = _check_lambda(lam)
    t = _grid_array(taus)
    d1 = np.zeros((t.size, 4))
    d2 = np.zeros((t.size, 4))
    dphi2_1 = t * _dh(lam[0] * t)
    d1[:, 1] = dphi2_1
    d1[:, 2] = dphi2_1 + t * np.exp(-lam[0] * t)
    d2[:, 3] = t * _dh(lam[1] * t) + t * np.exp(-lam[1] * t)
    return d1, d2


def curve_eval(params: NssParams, grid) -> np.ndarray:
    return basis_matrix(grid, params.lam) @ params.beta_array


def taylor_coefficients(params: NssParams) -> tuple[float, float]:
    """Level and slope of the short-end expansion y(tau) = level + slope * tau + O(tau^2)."""
    b1, b2, b3, b4 = params.beta
    l1, l2 = params.lam
    return b1 + b2, 0.5 * (l1 * (b3 - b2) + l2 * b4)
