"""Exact segmentation of a multivariate series into piecewise-constant means."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv


@dataclass(frozen=True)
class Segmentation:
    breakpoints: tuple[int, ...]  # index of the first observation of each new segment
    k: int
    sse: float
    cost_path: np.ndarray


@dataclass(frozen=True)
class DPResult:
    cost_path: np.ndarray
    breakpoints: tuple[tuple[int, ...], ...]
    n: int

    @property
    def k_max(self) -> int:
        return self.cost_path.size - 1

    def segmentation(self, k: int) -> Segmentation:
        if not 0 <= k <= self.k_max:
            raise ValueError(f"k must be in 0..{self.k_max}")
        return Segmentation(self.breakpoints[k], k, float(self.cost_path[k]), self.cost_path)

    def to_csv(self, path, labels=None):
        def lab(i):
            return labels[i] if labels is not None else i

        rows = [(k, self.cost_path[k], ";".join(str(lab(b)) for b in self.breakpoints[k])) for k in range(self.k_max + 1)]
        return write_csv(path, ("k", "sse", "breakpoints"), rows)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("series must be T x d")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


def segment_sse(x: np.ndarray, breakpoints) -> float:
    """Two-pass within-segment SSE for a given set of breakpoints."""
    x = _as_matrix(x)
    edges = [0, *breakpoints, x.shape[0]]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        seg = x[a:b]
        total += float(np.sum((seg - seg.mean(axis=0)) ** 2))
    return total


def _cost_table(x: np.ndarray) -> np.ndarray:
    """C[s, t] = SSE of x[s:t] for s < t (prefix sums); inf elsewhere."""
    n = x.shape[0]
    # centre first to limit cancellation in sum(x^2) - sum(x)^2 / len
    xc = x - x.mean(axis=0)
    s1 = np.vstack([np.zeros(x.shape[1]), np.cumsum(xc, axis=0)])
    s2 = np.concatenate([[0.0], np.cumsum(np.sum(xc * xc, axis=1))])
    idx = np.arange(n + 1)
    length = idx[None, :] - idx[:, None]
    diff1 = s1[None, :, :] - s1[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (s2[None, :] - s2[:, None]) - np.sum(diff1 * diff1, axis=2) / length
    c = np.where(length > 0, np.maximum(c, 0.0), np.inf)
    return c


def dp_segment(x, k_max: int) -> DPResult:
    """Optimal placement of exactly k changepoints for every k = 0..k_max."""
    x = _as_matrix(x)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations")
    if not 0 <= k_max < n:
        raise ValueError(f"k_max must satisfy 0 <= k_max < T = {n}, got {k_max}")
    c = _cost_table(x)
    # f[k, t]: best cost of x[:t] split into k+1 segments
    f = np.full((k_max + 1, n + 1), np.inf)
    arg = np.zeros((k_max + 1, n + 1), dtype=int)
    f[0] = c[0]
    for k in range(1, k_max + 1):
        tot = f[k - 1][:, None] + c  # s, t
        # strict argmin keeps the earliest s on ties
        arg[k] = np.argmin(tot, axis=0)
        f[k] = tot[arg[k], np.arange(n + 1)]
    bps = []
    costs = np.empty(k_max + 1)
    for k in range(k_max + 1):
        cut = []
        t = n
        for kk in range(k, 0, -1):
            t = int(arg[kk, t])
            cut.append(t)
        cut = tuple(sorted(cut))
        bps.append(cut)
        costs[k] = segment_sse(x, cut)
    # two-pass recomputation can break exact monotonicity by rounding
    costs = np.minimum.accumulate(costs)
    return DPResult(costs, tuple(bps), n)


def segment_sse_at_k(x, k: int) -> float:
    return dp_segment(x, k).segmentation(k).sse


def elbow_select(cost_path, tie_tol: float = 1e-12) -> int:
    """k maximizing log sse_{k-1} - 2 log sse_k + log sse_{k+1}; ties go to smaller k.

    If some sse_k is zero the fit is already perfect and the first such k is returned.
    """
    c = np.asarray(cost_path, dtype=float)
    if c.size < 3:
        raise ValueError("cost path needs at least 3 entries")
    if np.any(c < 0.0) or not np.all(np.isfinite(c)):
        raise ValueError("cost path must be finite and non-negative")
    zeros = np.flatnonzero(c == 0.0)
    if zeros.size:
        return int(zeros[0])
    lg = np.log(c)
    d2 = lg[:-2] - 2.0 * lg[1:-1] + lg[2:]
    best = float(np.max(d2))
    for i, v in enumerate(d2):
        if v >= best - tie_tol * max(1.0, abs(best)):
            return i + 1
    return 1


def standardize(x) -> np.ndarray:
    """Centre each column and scale to unit (population) variance; constant columns stay at zero."""
    x = _as_matrix(x)
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0.0, sd, 1.0)


def read_matrix_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """First column is a row label (e.g. month); the rest are numeric."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one data row")
    header = rows[0]
    labels, data = [], []
    for line, rec in enumerate(rows[1:], start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise ValueError(f"{path}: line {line}: expected {len(header)} fields, got {len(rec)}")
        labels.append(rec[0])
        try:
            data.append([float(v) for v in rec[1:]])
        except ValueError:
            raise ValueError(f"{path}: line {line}: non-numeric value") from None
    return header[1:], labels, np.asarray(data, dtype=float)


def relative_reduction(a: float, b: float) -> float:
    """(a - b) / a."""
    return (a - b) / a if a != 0 else math.nan
