"""Reduced (variable-projection) objective over the decay rates and the outer search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .core import MaturityGrid, _h, basis_matrix
from .ortho import InnerFit, inner_step, thin_qr_positive

DEFAULT_BOX = ((0.02, 0.02), (5.0, 5.0))


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LambdaBox:
    lo: tuple[float, float] = DEFAULT_BOX[0]
    hi: tuple[float, float] = DEFAULT_BOX[1]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 2 or len(hi) != 2:
            raise ValueError("box bounds must have two components")
        if not all(0.0 < a < b for a, b in zip(lo, hi)):
            raise ValueError(f"need 0 < lo < hi componentwise, got lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def parse(cls, text: str) -> "LambdaBox":
        vals = [float(v) for v in text.split(",")]
        if len(vals) != 4:
            raise ValueError("lambda box must be lo1,lo2,hi1,hi2")
        return cls((vals[0], vals[1]), (vals[2], vals[3]))

    def contains(self, lam) -> bool:
        return all(a <= v <= b for v, a, b in zip(lam, self.lo, self.hi))

    def log_bounds(self) -> list[tuple[float, float]]:
        return [(math.log(a), math.log(b)) for a, b in zip(self.lo, self.hi)]


@dataclass(frozen=True)
class OuterConfig:
    grid_points: int = 25
    xatol: float = 1e-8
    max_iter: int = 4000
    simplex_step: float = 0.1
    fallback_factor: float = 1.5
    n_starts: int = 8


@dataclass(frozen=True)
class FullFit:
    lam: np.ndarray
    inner: InnerFit
    objective: float
    iterations: int
    used_warm_start: bool
    fell_back: bool = False


def reduced_objective(lam, grid, y) -> float:
    """H(lambda) = ||y - Psi Psi^T y||^2 over the numerically independent columns."""
    y = np.asarray(y, dtype=float)
    fact = thin_qr_positive(basis_matrix(grid.array() if isinstance(grid, MaturityGrid) else grid, lam))
    psi = fact.psi[:, fact.active_columns()]
    r = y - psi @ (psi.T @ y)
    return float(r @ r)


def objective_scan(lam1_values, lam2_values, grid, y) -> np.ndarray:
    """H on the tensor grid lam1_values x lam2_values (batched QR)."""
    t = grid.array() if isinstance(grid, MaturityGrid) else np.asarray(grid, dtype=float)
    y = np.asarray(y, dtype=float)
    l1, l2 = np.meshgrid(np.asarray(lam1_values, float), np.asarray(lam2_values, float), indexing="ij")
    x1 = l1.reshape(-1, 1) * t
    x2 = l2.reshape(-1, 1) * t
    h1 = _h(x1)
    h2 = _h(x2)
    phi = np.stack([np.ones_like(x1), h1, h1 - np.exp(-x1), h2 - np.exp(-x2)], axis=2)
    q, r = np.linalg.qr(phi)
    d = np.abs(np.diagonal(r, axis1=1, axis2=2))
    tol = max(t.size, 4) * np.finfo(float).eps * d.max(axis=1, keepdims=True)
    coef = np.einsum("nmk,m->nk", q, y) * (d > tol)
    resid = y - np.einsum("nmk,nk->nm", q, coef)
    return np.einsum("nm,nm->n", resid, resid).reshape(l1.shape)


def _coarse_scan(box: LambdaBox, grid, y, n: int):
    g1 = np.geomspace(box.lo[0], box.hi[0], n)
    g2 = np.geomspace(box.lo[1], box.hi[1], n)
    h = objective_scan(g1, g2, grid, y)
    if not np.isfinite(h).any():
        raise OptimizationError("reduced objective is not finite anywhere on the coarse grid")
    return g1, g2, np.where(np.isfinite(h), h, np.inf)


def _grid_best(box: LambdaBox, grid, y, n: int) -> tuple[np.ndarray, float]:
    g1, g2, h = _coarse_scan(box, grid, y, n)
    best = np.min(h)
    # row-major order: smaller lambda_1 first, then smaller lambda_2
    i, j = np.argwhere(h == best)[0]
    return np.array([g1[i], g2[j]]), float(best)


def _grid_starts(box: LambdaBox, grid, y, n: int, k: int) -> tuple[list[np.ndarray], float]:
    """The k lowest local minima of the coarse scan (8-neighbourhood), best first."""
    g1, g2, h = _coarse_scan(box, grid, y, n)
    padded = np.pad(h, 1, constant_values=np.inf)
    neigh = np.min(
        [np.roll(np.roll(padded, di, 0), dj, 1)[1:-1, 1:-1]
         for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj],
        axis=0,
    )
    cand = np.argwhere(h <= neigh)
    # stable sort keeps the smaller-lambda tie order of argwhere
    order = np.argsort(h[cand[:, 0], cand[:, 1]], kind="stable")[:k]
    starts = [np.array([g1[i], g2[j]]) for i, j in cand[order]]
    return starts, float(np.min(h))


def simplex_search(f, start, log_bounds, cfg: OuterConfig):
    """Bounded Nelder-Mead on log(lambda); stops on simplex diameter only."""
    x0 = np.log(np.asarray(start, dtype=float).reshape(-1))
    x0 = np.array([min(max(v, b[0]), b[1]) for v, b in zip(x0, log_bounds)])
    simplex = [x0]
    for k in range(x0.size):
        v = x0.copy()
        v[k] += cfg.simplex_step
        if v[k] > log_bounds[k][1]:
            v[k] = x0[k] - cfg.simplex_step
        simplex.append(v)
    res = minimize(
        lambda z: f(np.exp(z)),
        x0,
        method="Nelder-Mead",
        bounds=log_bounds,
        options={
            "initial_simplex": np.array(simplex),
            "xatol": cfg.xatol,
            "fatol": np.inf,
            "maxiter": cfg.max_iter,
            "maxfev": 4 * cfg.max_iter,
        },
    )
    return np.exp(res.x), float(res.fun), int(res.nit)


def _polish(start, box: LambdaBox, grid, y, cfg: OuterConfig):
    return simplex_search(lambda lam: reduced_objective(lam, grid, y), start, box.log_bounds(), cfg)


def _finish(lam, grid, y, sigma, delta, model, iterations, warm, fell_back=False) -> FullFit:
    inner = inner_step(grid, y, lam, sigma, delta, model=model)
    return FullFit(
        lam=np.asarray(lam, dtype=float),
        inner=inner,
        objective=reduced_objective(lam, grid, y),
        iterations=iterations,
        used_warm_start=warm,
        fell_back=fell_back,
    )


def fit_global(
    grid: MaturityGrid,
    y,
    box: Optional[LambdaBox] = None,
    sigma: float = 5e-5,
    delta: Optional[float] = None,
    *,
    model: str = "auto",
    config: OuterConfig = OuterConfig(),
) -> FullFit:
    """Coarse log-spaced scan of H over the box followed by simplex polishes.

    The polish starts from the ``config.n_starts`` lowest local minima of the
    scan; the reduced objective has shallow valleys at small lambda_2 that can
    undercut the true basin on a coarse grid.
    """
    box = box or LambdaBox()
    y = np.asarray(y, dtype=float)
    starts, best = _grid_starts(box, grid, y, config.grid_points, config.n_starts)
    lam, h, nit = starts[0], best, 0
    for start in starts:
        cand, hc, it = _polish(start, box, grid, y, config)
        nit += it
        if math.isfinite(hc) and hc < h:
            lam, h = cand, hc
    return _finish(lam, grid, y, sigma, delta, model, nit, warm=False)


def fit_warm(
    grid: MaturityGrid,
    y,
    prev_lambda,
    box: Optional[LambdaBox] = None,
    sigma: float = 5e-5,
    delta: Optional[float] = None,
    *,
    model: str = "auto",
    config: OuterConfig = OuterConfig(),
) -> FullFit:
    """Local polish from yesterday's decay rates, with a coarse-grid safety net.

    Falls back to a full global fit when the polished objective exceeds
    ``config.fallback_factor`` times the best coarse-grid objective.
    """
    box = box or LambdaBox()
    y = np.asarray(y, dtype=float)
    if not box.contains(prev_lambda):
        raise ValueError(f"warm start {list(prev_lambda)} lies outside the box")
    lam, h, nit = _polish(prev_lambda, box, grid, y, config)
    h_prev = reduced_objective(prev_lambda, grid, y)
    if not h <= h_prev:
        lam, h = np.asarray(prev_lambda, dtype=float), h_prev
    _, coarse = _grid_best(box, grid, y, config.grid_points)
    if h > config.fallback_factor * coarse:
        fit = fit_global(grid, y, box, sigma, delta, model=model, config=config)
        return FullFit(fit.lam, fit.inner, fit.objective, fit.iterations + nit, True, True)
    return _finish(lam, grid, y, sigma, delta, model, nit, warm=True)
