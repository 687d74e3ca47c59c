"""Profile negative log-likelihoods and Wilks intervals.

With Gaussian errors of known sigma, the profile of a parameter theta_j is

    dNLL(v) = (min RSS | theta_j = v  -  RSS_hat) / (2 sigma^2).

Conditional profiles hold the decay rates fixed and are exact quadratics;
full profiles re-optimize everything else, including lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._io import write_csv
from .core import MaturityGrid, as_array, design_matrix
from .covariance import WeakIdentificationError, full_covariance, nonlinear_sensitivities
from .ortho import OrthoFactorization, thin_qr_positive
from .varpro import LambdaBox, OuterConfig, fit_global, simplex_search

# (df, level) -> chi-square quantile
CHI2_QUANTILES = {
    (1, 0.90): 2.705543454095404,
    (1, 0.95): 3.841458820694124,
    (1, 0.99): 6.634896601021214,
    (2, 0.90): 4.605170185988092,
    (2, 0.95): 5.991464547107979,
    (2, 0.99): 9.210340371976184,
}

PARAMETERS = ("beta1", "beta2", "beta3", "beta4", "gamma1", "gamma2", "gamma3", "gamma4", "lambda1", "lambda2")

DEFAULT_POINTS = 201
DEFAULT_SPAN = 5.0


def dnll_threshold(level: float = 0.95, df: int = 1) -> float:
    try:
        return 0.5 * CHI2_QUANTILES[(df, round(level, 4))]
    except KeyError:
        raise ValueError(f"no chi-square quantile tabulated for df={df}, level={level}") from None


def _parse_param(param: str) -> tuple[str, int]:
    param = param.strip().lower()
    if param not in PARAMETERS:
        raise ValueError(f"unknown parameter {param!r}; expected one of {', '.join(PARAMETERS)}")
    return param[:-1], int(param[-1])


def _check_j(j: int) -> int:
    if j not in (1, 2, 3, 4):
        raise ValueError(f"linear parameter index must be 1..4, got {j}")
    return j - 1


@dataclass(frozen=True)
class ProfileCurve:
    param: str
    values: np.ndarray
    dnll: np.ndarray
    conditional: bool
    mle: float
    profile_std: Optional[float] = None
    flat: bool = False
    vif: Optional[float] = None

    @property
    def chi2(self) -> np.ndarray:
        return 2.0 * self.dnll

    def to_csv(self, path):
        return write_csv(path, ("value", "dnll"), zip(self.values, self.dnll))


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    threshold: float
    segments: tuple[tuple[float, float], ...] = ()
    unbounded_lower: bool = False
    unbounded_upper: bool = False

    @property
    def unbounded(self) -> bool:
        return self.unbounded_lower or self.unbounded_upper

    @property
    def width(self) -> float:
        return math.inf if self.unbounded else self.upper - self.lower


@dataclass(frozen=True)
class Landscape2D:
    pair: tuple[str, str]
    x: np.ndarray
    y: np.ndarray
    dnll: np.ndarray
    mle: np.ndarray
    path_x: np.ndarray  # optimal second coordinate for each x
    path_y: np.ndarray  # optimal first coordinate for each y

    def to_csv(self, path):
        xx, yy = np.meshgrid(self.x, self.y, indexing="ij")
        return write_csv(path, (self.pair[0], self.pair[1], "dnll"), zip(xx.ravel(), yy.ravel(), self.dnll.ravel()))

    def paths_to_csv(self, path):
        rows = [(f"{self.pair[0]}_fixed", a, b) for a, b in zip(self.x, self.path_x)]
        rows += [(f"{self.pair[1]}_fixed", a, b) for a, b in zip(self.path_y, self.y)]
        return write_csv(path, ("path", self.pair[0], self.pair[1]), rows)


def _default_values(center: float, scale: float, n: int = DEFAULT_POINTS, span: float = DEFAULT_SPAN) -> np.ndarray:
    return center + scale * np.linspace(-span, span, n)


# ---------------------------------------------------------------- conditional


def _perp_norm2(phi: np.ndarray, j: int) -> float:
    others = np.delete(phi, j, axis=1)
    q, _ = np.linalg.qr(others)
    col = phi[:, j]
    perp = col - q @ (q.T @ col)
    return float(perp @ perp)


def conditional_profile_beta(
    j: int,
    phi,
    y,
    sigma: float,
    values: Optional[Sequence[float]] = None,
    method: str = "closed_form",
) -> ProfileCurve:
    """Profile of beta_j at fixed lambda, the other three coefficients profiled out.

    ``method="numeric"`` re-solves the constrained three-column least squares at
    every value instead of using the quadratic form.
    """
    k = _check_j(j)
    a = as_array(phi)
    y = np.asarray(y, dtype=float)
    beta_hat, *_ = np.linalg.lstsq(a, y, rcond=None)
    norm2 = float(a[:, k] @ a[:, k])
    perp2 = _perp_norm2(a, k)
    flat = perp2 <= (1e-13) ** 2 * norm2
    mle = float(beta_hat[k])
    std = None if flat else sigma / math.sqrt(perp2)
    vif = math.inf if flat else norm2 / perp2
    if values is None:
        values = _default_values(mle, sigma / math.sqrt(norm2) if flat else std)
    values = np.asarray(values, dtype=float)
    if method == "closed_form":
        dnll = np.zeros_like(values) if flat else (values - mle) ** 2 * perp2 / (2.0 * sigma ** 2)
    elif method == "numeric":
        others = np.delete(a, k, axis=1)
        q, _ = np.linalg.qr(others)
        r_hat = y - a @ beta_hat
        rss_hat = float(r_hat @ r_hat)
        dnll = np.empty_like(values)
        for i, v in enumerate(values):
            z = y - v * a[:, k]
            res = z - q @ (q.T @ z)
            dnll[i] = (float(res @ res) - rss_hat) / (2.0 * sigma ** 2)
    else:
        raise ValueError(f"unknown profile method {method!r}")
    return ProfileCurve(f"beta{j}", values, dnll, True, mle, std, flat, vif)


def conditional_profile_gamma(
    j: int,
    fact: OrthoFactorization,
    y,
    sigma: float,
    values: Optional[Sequence[float]] = None,
) -> ProfileCurve:
    """Profile of gamma_j at fixed lambda: (v - gamma_hat_j)^2 / (2 sigma^2)."""
    k = _check_j(j)
    if not isinstance(fact, OrthoFactorization):
        fact = thin_qr_positive(fact)
    gamma_hat = fact.psi.T @ np.asarray(y, dtype=float)
    mle = float(gamma_hat[k])
    values = _default_values(mle, sigma) if values is None else np.asarray(values, dtype=float)
    dnll = (values - mle) ** 2 / (2.0 * sigma ** 2)
    return ProfileCurve(f"gamma{j}", values, dnll, True, mle, float(sigma), False, 1.0)


# ----------------------------------------------------------------------- full


def _batch_qr(lams: np.ndarray, taus: np.ndarray):
    """Sign-fixed stacked QR of the design matrices at each row of ``lams``."""
    x1 = lams[:, :1] * taus
    x2 = lams[:, 1:] * taus
    e1, e2 = np.exp(-x1), np.exp(-x2)
    h1 = -np.expm1(-x1) / x1
    h2 = -np.expm1(-x2) / x2
    phi = np.stack([np.ones_like(x1), h1, h1 - e1, h2 - e2], axis=2)
    q, r = np.linalg.qr(phi)
    d = np.diagonal(r, axis1=1, axis2=2)
    s = np.where(d < 0.0, -1.0, 1.0)
    q = q * s[:, None, :]
    r = r * s[:, :, None]
    d = np.abs(d)
    ok = d.min(axis=1) > max(taus.size, 4) * np.finfo(float).eps * d.max(axis=1)
    return q, r, ok


def _profile_objective(kind: str, k: int, v: float, lams: np.ndarray, taus: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Constrained RSS at each row of ``lams`` with parameter (kind, k) pinned to v."""
    q, r, ok = _batch_qr(lams, taus)
    gamma = np.einsum("nmk,m->nk", q, y)
    fitted = np.einsum("nmk,nk->nm", q, gamma)
    resid = y - fitted
    h = np.einsum("nm,nm->n", resid, resid)
    out = np.full(lams.shape[0], np.inf)
    if kind == "lambda":
        out = np.where(ok, h, np.inf)
        return out
    if kind == "gamma":
        return np.where(ok, h + (gamma[:, k] - v) ** 2, np.inf)
    # beta: RSS_hat(lambda) + (beta_hat_j - v)^2 * ||phi_j_perp||^2
    idx = np.flatnonzero(ok)
    if idx.size:
        rr = r[idx]
        rinv = np.linalg.inv(rr)
        beta = np.einsum("nij,nj->ni", rinv, gamma[idx])
        w = 1.0 / np.einsum("nj,nj->n", rinv[:, k, :], rinv[:, k, :])
        out[idx] = h[idx] + (beta[:, k] - v) ** 2 * w
    return out


def _param_value(kind: str, k: int, lam: np.ndarray, fact: OrthoFactorization, y: np.ndarray) -> float:
    if kind == "lambda":
        return float(lam[k])
    gamma = fact.psi.T @ y
    if kind == "gamma":
        return float(gamma[k])
    return float(np.linalg.solve(fact.r, gamma)[k])


def full_profile(
    param: str,
    grid: MaturityGrid,
    y,
    sigma: float,
    values: Optional[Sequence[float]] = None,
    *,
    box: Optional[LambdaBox] = None,
    config: OuterConfig = OuterConfig(),
    chain: bool = True,
    scan_points: int = 25,
    n_points: int = 41,
) -> ProfileCurve:
    """Profile over all remaining parameters, decay rates included.

    Points are visited outward from the MLE, each polish starting at the
    previous point's decay rates (``chain=True``); a coarse scan of the
    constrained objective is consulted at every point so that a jump to a
    distant basin is not missed.  Points where the search fails are NaN.
    """
    kind, j = _parse_param(param)
    k = j - 1
    box = box or LambdaBox()
    taus = grid.array() if isinstance(grid, MaturityGrid) else np.asarray(grid, dtype=float)
    y = np.asarray(y, dtype=float)

    fit = fit_global(grid, y, box, sigma, model="nss", config=config)
    lam_hat = fit.lam
    fact = fit.inner.fact
    mle = _param_value(kind, k, lam_hat, fact, y)
    rss_hat = fit.objective

    if values is None:
        if kind == "lambda":
            try:
                g = nonlinear_sensitivities(lam_hat, fact.psi.T @ y, taus)
                scale = math.sqrt(full_covariance(fact, g, sigma).cov_lambda[k, k])
            except (WeakIdentificationError, ValueError):
                scale = 0.1 * mle
            scale = min(scale, 0.1 * mle)
        elif kind == "gamma":
            scale = sigma
        else:
            std = conditional_profile_beta(j, fact.psi @ fact.r, y, sigma, [mle]).profile_std
            scale = std if std is not None else sigma
        values = _default_values(mle, scale, n_points)
    values = np.asarray(values, dtype=float)
    if kind == "lambda" and (np.any(values < box.lo[k]) or np.any(values > box.hi[k])):
        raise ValueError(f"profile values for {param} must lie inside the lambda box")

    free = 1 - k
    if kind == "lambda":
        lo, hi = box.lo[free], box.hi[free]
        scan = np.geomspace(lo, hi, scan_points)
        log_bounds = [(math.log(lo), math.log(hi))]
    else:
        g1 = np.geomspace(box.lo[0], box.hi[0], scan_points)
        g2 = np.geomspace(box.lo[1], box.hi[1], scan_points)
        scan = np.array(np.meshgrid(g1, g2, indexing="ij")).reshape(2, -1).T
        log_bounds = box.log_bounds()

    def full_lams(z: np.ndarray, v: float) -> np.ndarray:
        if kind != "lambda":
            return np.atleast_2d(z)
        z = np.atleast_1d(z)
        out = np.empty((z.size, 2))
        out[:, k] = v
        out[:, free] = z
        return out

    def solve_point(v: float, start: np.ndarray) -> tuple[float, np.ndarray]:
        def f(z):
            return float(_profile_objective(kind, k, v, full_lams(z, v), taus, y)[0])

        grid_vals = _profile_objective(kind, k, v, full_lams(scan, v), taus, y)
        starts = [start] if chain else []
        i = int(np.argmin(grid_vals))
        if not chain or grid_vals[i] < f(start):
            starts.append(scan[i])
        best_val, best_z = math.inf, start
        for s in starts:
            z, val, _ = simplex_search(f, s, log_bounds, config)
            if math.isfinite(val) and val < best_val:
                best_val, best_z = val, z
        return best_val, best_z

    rss = np.full(values.size, np.nan)
    zs: list = [None] * values.size
    origin = lam_hat[free:free + 1] if kind == "lambda" else lam_hat
    centre = int(np.argmin(np.abs(values - mle)))

    def visit(i: int, start) -> None:
        try:
            val, z = solve_point(float(values[i]), start)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            return
        if math.isfinite(val) and not val >= rss[i]:
            rss[i], zs[i] = val, z

    for order in (range(centre, values.size), range(centre - 1, -1, -1)):
        prev = None
        for i in order:
            visit(i, zs[prev] if chain and prev is not None and zs[prev] is not None else origin)
            prev = i
    if chain:
        # sweep back across the whole grid so a basin found late propagates
        for order in (range(1, values.size), range(values.size - 2, -1, -1)):
            for i in order:
                nb = i - 1 if order.step == 1 else i + 1
                if zs[nb] is not None:
                    visit(i, zs[nb])
    baseline = min(rss_hat, float(np.nanmin(rss))) if np.isfinite(rss).any() else rss_hat
    dnll = (rss - baseline) / (2.0 * sigma ** 2)
    return ProfileCurve(f"{kind}{j}", values, dnll, False, mle, None, False, None)


# ------------------------------------------------------------------ intervals


def confidence_interval(curve: ProfileCurve, level: float = 0.95) -> ConfidenceInterval:
    """Set where dNLL <= chi2_{1,level} / 2.

    Exact quadratic (conditional) profiles use mle +/- z * profile_std; other
    curves are linearly interpolated between grid points.  A sub-threshold run
    that reaches the end of the grid is flagged unbounded on that side.
    """
    thr = dnll_threshold(level, 1)
    if curve.flat:
        return ConfidenceInterval(-math.inf, math.inf, level, thr, ((-math.inf, math.inf),), True, True)
    if curve.conditional and curve.profile_std is not None:
        half = math.sqrt(2.0 * thr) * curve.profile_std
        lo, hi = curve.mle - half, curve.mle + half
        return ConfidenceInterval(lo, hi, level, thr, ((lo, hi),))
    v = np.asarray(curve.values, dtype=float)
    d = np.asarray(curve.dnll, dtype=float)
    keep = np.isfinite(d)
    v, d = v[keep], d[keep]
    order = np.argsort(v)
    v, d = v[order], d[order]
    inside = d <= thr
    if not inside.any():
        raise ValueError("profile never drops below the threshold; the grid misses the MLE")
    segments = []
    n = v.size
    i = 0
    unb_lo = unb_hi = False
    while i < n:
        if not inside[i]:
            i += 1
            continue
        s = i
        while i + 1 < n and inside[i + 1]:
            i += 1
        e = i
        if s == 0:
            lo = v[0]
            unb_lo = True
        else:
            lo = _crossing(v[s - 1], d[s - 1], v[s], d[s], thr)
        if e == n - 1:
            hi = v[-1]
            unb_hi = True
        else:
            hi = _crossing(v[e], d[e], v[e + 1], d[e + 1], thr)
        segments.append((float(lo), float(hi)))
        i += 1
    return ConfidenceInterval(
        segments[0][0], segments[-1][1], level, thr, tuple(segments), unb_lo, unb_hi
    )


def _crossing(v0: float, d0: float, v1: float, d1: float, thr: float) -> float:
    if d1 == d0:
        return 0.5 * (v0 + v1)
    return v0 + (thr - d0) * (v1 - v0) / (d1 - d0)


# ------------------------------------------------------------------ landscape


def landscape_2d(
    pair: str,
    phi_or_fact,
    y,
    sigma: float,
    ranges: Optional[tuple[Sequence[float], Sequence[float]]] = None,
    indices: tuple[int, int] = (3, 4),
    n_points: int = 101,
) -> Landscape2D:
    """Conditional dNLL over a pair of linear coordinates, the other two profiled out.

    ``pair`` is ``"beta"`` or ``"gamma"``.  Each profile path gives the optimal
    second coordinate with the first fixed (``path_x``) and vice versa.
    """
    if pair not in ("beta", "gamma"):
        raise ValueError("pair must be 'beta' or 'gamma'")
    a, b = (_check_j(i) for i in indices)
    if a == b:
        raise ValueError("landscape needs two distinct coordinates")
    fact = phi_or_fact if isinstance(phi_or_fact, OrthoFactorization) else thin_qr_positive(phi_or_fact)
    if fact.degenerate:
        raise np.linalg.LinAlgError("design matrix is rank deficient at this lambda")
    y = np.asarray(y, dtype=float)
    gamma = fact.psi.T @ y
    if pair == "gamma":
        theta = gamma
        cov = np.eye(4)
    else:
        theta = np.linalg.solve(fact.r, gamma)
        rinv = np.linalg.inv(fact.r)
        cov = rinv @ rinv.T
    sub = cov[np.ix_([a, b], [a, b])]
    w = np.linalg.inv(sub)
    mle = theta[[a, b]]
    if ranges is None:
        sd = sigma * np.sqrt(np.diag(sub))
        ranges = (_default_values(mle[0], sd[0], n_points), _default_values(mle[1], sd[1], n_points))
    x = np.asarray(ranges[0], dtype=float)
    yy = np.asarray(ranges[1], dtype=float)
    dx = x[:, None] - mle[0]
    dy = yy[None, :] - mle[1]
    dnll = (w[0, 0] * dx ** 2 + 2.0 * w[0, 1] * dx * dy + w[1, 1] * dy ** 2) / (2.0 * sigma ** 2)
    path_x = mle[1] - w[1, 0] / w[1, 1] * (x - mle[0])
    path_y = mle[0] - w[0, 1] / w[0, 0] * (yy - mle[1])
    names = (f"{pair}{indices[0]}", f"{pair}{indices[1]}")
    return Landscape2D(names, x, yy, dnll, mle, path_x, path_y)


def conditional_profiles(grid: MaturityGrid, lam, y, sigma: float, span: float = DEFAULT_SPAN, n: int = DEFAULT_POINTS):
    """All eight conditional profiles on a common (theta - theta_hat)/sigma axis."""
    phi = design_matrix(grid, lam)
    fact = thin_qr_positive(phi)
    offsets = sigma * np.linspace(-span, span, n)
    curves = []
    for j in range(1, 5):
        b = conditional_profile_beta(j, phi, y, sigma, [0.0])
        curves.append(conditional_profile_beta(j, phi, y, sigma, b.mle + offsets))
        g = conditional_profile_gamma(j, fact, y, sigma, [0.0])
        curves.append(conditional_profile_gamma(j, fact, y, sigma, g.mle + offsets))
    return curves
