"""Synthetic curves for the named regimes and the data behind the conditioning tables and figures."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._io import write_csv
from .core import MaturityGrid, NssParams, REDUCED_9_TENORS, basis_matrix, curve_eval, design_matrix, us_grid
from .covariance import conditional_beta_cov
from .ortho import condition_number, thin_qr_positive

BASELINE_BETA = (0.04, -0.02, 0.015, 0.008)
BASELINE_LAMBDA1 = 0.6
SIGMA_DEFAULT = 5e-5

REGIMES: dict[str, NssParams] = {
    "normal": NssParams(BASELINE_BETA, (0.6, 0.2)),
    "flat": NssParams((0.03, -0.002, 0.001, 0.0005), (0.6, 0.3)),
    "inverted": NssParams((0.03, 0.02, -0.01, -0.005), (0.5, 0.25)),
    "humped": NssParams((0.035, -0.01, 0.04, 0.0), (0.8, 0.4)),
    "double_humped": NssParams((0.035, -0.015, 0.03, -0.02), (1.2, 0.25)),
    "near_degenerate": NssParams(BASELINE_BETA, (0.6, 0.55)),
    "small_lambda": NssParams(BASELINE_BETA, (0.08, 0.04)),
    "large_lambda": NssParams(BASELINE_BETA, (3.0, 1.5)),
}

TABLE1_ROWS = (
    ("Well-separated", 0.2),
    ("Moderate", 0.4),
    ("Near-degenerate", 0.55),
    ("Very degenerate", 0.59),
)


@dataclass(frozen=True)
class Regime:
    name: str
    params: NssParams


def regime(name: str) -> Regime:
    try:
        return Regime(name, REGIMES[name])
    except KeyError:
        raise ValueError(f"unknown regime {name!r}; choose from {', '.join(REGIMES)}") from None


@dataclass(frozen=True)
class SyntheticCurve:
    grid: MaturityGrid
    y_true: np.ndarray
    y_noisy: np.ndarray
    sigma: float
    seed: int
    regime: str


def generate(regime_name: str, sigma: float = SIGMA_DEFAULT, seed: int = 0, grid: Optional[MaturityGrid] = None) -> SyntheticCurve:
    """Regime curve on the grid plus N(0, sigma^2) noise from a seeded PCG64 stream."""
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    reg = regime(regime_name)
    grid = grid or us_grid()
    y_true = curve_eval(reg.params, grid.array())
    rng = np.random.default_rng(seed)
    y_noisy = y_true + sigma * rng.standard_normal(grid.m)
    return SyntheticCurve(grid, y_true, y_noisy, float(sigma), int(seed), reg.name)


@dataclass(frozen=True)
class Table1Row:
    label: str
    lambda2: float
    kappa: float
    r44: float
    std_beta: np.ndarray
    std_gamma: np.ndarray
    max_abs_corr: float


TABLE1_HEADER = (
    "regime", "lambda1", "lambda2", "kappa", "r44",
    "std_beta1", "std_beta2", "std_beta3", "std_beta4",
    "std_gamma", "max_abs_corr",
)


def table1_report(
    sigma: float = SIGMA_DEFAULT,
    lambda1: float = BASELINE_LAMBDA1,
    rows: Sequence[tuple[str, float]] = TABLE1_ROWS,
    grid: Optional[MaturityGrid] = None,
) -> list[Table1Row]:
    """Conditioning of the classical vs orthogonal coordinates at fixed decay rates.

    The orthogonal standard deviations are sigma exactly (Psi has orthonormal columns).
    """
    grid = grid or us_grid()
    out = []
    for label, l2 in rows:
        phi = design_matrix(grid, (lambda1, l2))
        fact = thin_qr_positive(phi)
        cc = conditional_beta_cov(fact, sigma)
        gcov = sigma ** 2 * (fact.psi.T @ fact.psi)
        out.append(
            Table1Row(label, float(l2), condition_number(phi), fact.r44, cc.std,
                      np.sqrt(np.diag(gcov)), cc.max_abs_corr)
        )
    return out


def table1_rows_for_csv(rows: Sequence[Table1Row], lambda1: float = BASELINE_LAMBDA1):
    for r in rows:
        yield (r.label, lambda1, r.lambda2, r.kappa, r.r44, *r.std_beta, float(np.max(r.std_gamma)), r.max_abs_corr)


def r44_sweep(lambda1: float, lambda2_grid, grid: Optional[MaturityGrid] = None) -> np.ndarray:
    """Rows (lambda_2, |R44|, kappa) along a sweep of the second decay rate."""
    grid = grid or us_grid()
    rows = []
    for l2 in np.asarray(lambda2_grid, dtype=float):
        phi = design_matrix(grid, (lambda1, l2))
        rows.append((l2, thin_qr_positive(phi).r44, condition_number(phi)))
    return np.asarray(rows)


def condition_map(lambda1_grid, lambda2_grid, grid: Optional[MaturityGrid] = None) -> np.ndarray:
    """log10 kappa on the tensor grid; exact diagonal points are NaN."""
    grid = grid or us_grid()
    l1s = np.asarray(lambda1_grid, dtype=float)
    l2s = np.asarray(lambda2_grid, dtype=float)
    out = np.full((l1s.size, l2s.size), np.nan)
    for i, a in enumerate(l1s):
        for j, b in enumerate(l2s):
            if a == b:
                continue
            out[i, j] = np.log10(condition_number(design_matrix(grid, (a, b))))
    return out


def basis_curves(lam, grid_dense=None, fit_grid: Optional[MaturityGrid] = None) -> dict[str, np.ndarray]:
    """phi_j and psi_j = (phi R^{-1})_j on a dense maturity grid; R comes from the fit grid."""
    fit_grid = fit_grid or us_grid()
    if grid_dense is None:
        grid_dense = np.linspace(0.05, 30.0, 300)
    taus = np.asarray(grid_dense, dtype=float)
    fact = thin_qr_positive(design_matrix(fit_grid, lam))
    if fact.degenerate:
        raise np.linalg.LinAlgError("basis curves need lambda_1 != lambda_2")
    phi = basis_matrix(taus, lam)
    psi = np.linalg.solve(fact.r.T, phi.T).T
    out = {"tau": taus}
    for j in range(4):
        out[f"phi{j + 1}"] = phi[:, j]
    for j in range(4):
        out[f"psi{j + 1}"] = psi[:, j]
    return out


def regime_curves(grid_dense=None) -> dict[str, np.ndarray]:
    if grid_dense is None:
        grid_dense = np.linspace(0.05, 30.0, 300)
    taus = np.asarray(grid_dense, dtype=float)
    out = {"tau": taus}
    for name, params in REGIMES.items():
        out[name] = curve_eval(params, taus)
    return out


def write_columns(path, cols: dict[str, np.ndarray]):
    keys = list(cols)
    return write_csv(path, keys, zip(*(cols[k] for k in keys)))


def _business_days(start: dt.date, n: int) -> list[dt.date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def synthetic_history(
    n_days: int = 500,
    seed: int = 0,
    sigma: float = SIGMA_DEFAULT,
    tenors: Sequence[str] = REDUCED_9_TENORS,
    start: dt.date = dt.date(2010, 1, 4),
):
    """Daily curves on business days with slowly drifting factors and decay rates.

    Decay rates follow a bounded random walk in log space, well away from the
    degenerate manifold; the linear factors follow AR(1) paths around the
    baseline.
    """
    from .timeseries import YieldHistory

    rng = np.random.default_rng(seed)
    grid = MaturityGrid.from_labels(tenors)
    taus = grid.array()
    dates = _business_days(start, n_days)
    base = np.asarray(BASELINE_BETA)
    dev = np.zeros(4)
    loglam = np.log([2.5, 0.3])
    ys = np.empty((n_days, grid.m))
    scale = np.array([4e-4, 4e-4, 8e-4, 6e-4])
    for t in range(n_days):
        dev = 0.98 * dev + scale * rng.standard_normal(4)
        loglam = loglam + 0.005 * rng.standard_normal(2)
        loglam = np.clip(loglam, np.log([1.8, 0.22]), np.log([3.5, 0.4]))
        beta = base + dev
        ys[t] = basis_matrix(taus, np.exp(loglam)) @ beta + sigma * rng.standard_normal(grid.m)
    return YieldHistory(tuple(dates), tuple(tenors), grid, ys)
