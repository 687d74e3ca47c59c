"""Daily Treasury curve calibration: ingestion, warm-started fits and diagnostics.

Input is a plain CSV with an ISO-8601 ``date`` column and tenor columns in
percent (``ND`` or empty for missing).  Yields are decimal internally; basis
points appear only in the written summaries.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from ._io import to_jsonable, write_csv
from .core import TENOR_YEARS, MaturityGrid, design_matrix
from .ortho import thin_qr_positive
from .varpro import FullFit, LambdaBox, OuterConfig, fit_global, fit_warm, reduced_objective

log = logging.getLogger(__name__)

BP = 1e4
MISSING_MARKERS = {"", "ND", "NA", "N/A", "NAN"}


class ConfigError(ValueError):
    """Invalid pipeline configuration, e.g. an unknown tenor label."""


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class YieldHistory:
    dates: tuple[dt.date, ...]
    tenors: tuple[str, ...]
    grid: MaturityGrid
    yields: np.ndarray  # T x m, decimal, NaN where missing

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.yields)

    def __len__(self) -> int:
        return len(self.dates)


def _normalize_tenor(label: str) -> str:
    lab = label.strip().upper()
    if lab not in TENOR_YEARS:
        raise ConfigError(f"unknown tenor label {label!r}")
    return lab


def parse_tenors(text: str) -> tuple[str, ...]:
    return tuple(_normalize_tenor(t) for t in text.split(",") if t.strip())


def load_history(
    path,
    tenors: Optional[Sequence[str]] = None,
    complete_case: bool = True,
    start: Optional[dt.date] = None,
    end: Optional[dt.date] = None,
) -> YieldHistory:
    """Read a dated yield CSV and convert percent to decimal.

    ``tenors`` selects (and orders by maturity) a subset of the tenor columns;
    rows outside [start, end] are skipped; with ``complete_case`` rows missing
    any selected tenor are dropped.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0].lower() != "date":
            raise ParseError(1, "first column must be 'date'")
        cols = {}
        for i, h in enumerate(header[1:], start=1):
            lab = h.upper()
            if lab not in TENOR_YEARS:
                raise ConfigError(f"unknown tenor column {h!r} in {path.name}")
            cols[lab] = i
        if tenors is None:
            selected = list(cols)
        else:
            selected = [_normalize_tenor(t) for t in tenors]
            absent = [t for t in selected if t not in cols]
            if absent:
                raise ConfigError(f"tenor(s) {', '.join(absent)} not present in {path.name}")
        if len(set(selected)) != len(selected):
            raise ConfigError("duplicate tenor in selection")
        selected.sort(key=TENOR_YEARS.__getitem__)
        idx = [cols[t] for t in selected]

        dates: list[dt.date] = []
        rows: list[list[float]] = []
        prev: Optional[dt.date] = None
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(line_no, f"expected {len(header)} fields, got {len(rec)}")
            try:
                day = dt.date.fromisoformat(rec[0].strip())
            except ValueError:
                raise ParseError(line_no, f"bad date {rec[0]!r}") from None
            if prev is not None and day <= prev:
                raise ParseError(line_no, f"dates must be strictly increasing ({day} after {prev})")
            prev = day
            if (start is not None and day < start) or (end is not None and day > end):
                continue
            vals = []
            for i in idx:
                cell = rec[i].strip()
                if cell.upper() in MISSING_MARKERS:
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(line_no, f"bad yield {cell!r} in column {header[i]}") from None
                if not math.isfinite(v):
                    raise ParseError(line_no, f"non-finite yield in column {header[i]}")
                vals.append(v / 100.0)
            if complete_case and any(math.isnan(v) for v in vals):
                continue
            dates.append(day)
            rows.append(vals)
    grid = MaturityGrid(tuple(TENOR_YEARS[t] for t in selected))
    ys = np.asarray(rows, dtype=float).reshape(len(rows), len(selected))
    return YieldHistory(tuple(dates), tuple(selected), grid, ys)


@dataclass(frozen=True)
class PipelineConfig:
    box: LambdaBox = field(default_factory=LambdaBox)
    sigma: float = 5e-5
    delta: Optional[float] = None
    model: str = "nss"
    outer: OuterConfig = field(default_factory=OuterConfig)


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    ok: bool
    lam: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    p: Optional[int] = None
    r44: Optional[float] = None
    kappa: Optional[float] = None
    rmse: Optional[float] = None
    sigma_hat: Optional[float] = None
    basis_rotation: Optional[float] = None
    fisher_std_beta: Optional[np.ndarray] = None
    fisher_std_gamma: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None
    objective: Optional[float] = None
    prev_objective: Optional[float] = None
    warm_fallback: bool = False
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "date": self.date.isoformat(),
            "ok": self.ok,
            "lambda": self.lam,
            "gamma": self.gamma,
            "beta": self.beta,
            "p": self.p,
            "r44": self.r44,
            "kappa": self.kappa,
            "rmse": self.rmse,
            "sigma_hat": self.sigma_hat,
            "basis_rotation": self.basis_rotation,
            "fisher_std_beta": self.fisher_std_beta,
            "fisher_std_gamma": self.fisher_std_gamma,
            "residuals": self.residuals,
            "objective": self.objective,
            "warm_fallback": self.warm_fallback,
            "error": self.error,
        }
        return to_jsonable(d)


def basis_rotation(psi_prev: np.ndarray, psi: np.ndarray) -> float:
    """||Psi_{t-1}^T Psi_t - I||_F."""
    return float(np.linalg.norm(psi_prev.T @ psi - np.eye(psi.shape[1])))


def _record(day: dt.date, fit: FullFit, y: np.ndarray, psi_prev, prev_obj) -> DailyRecord:
    inner = fit.inner
    fact = inner.fact
    m = y.size
    rss = inner.rss
    sigma_hat = math.sqrt(rss / (m - 4)) if m > 4 else math.nan
    rinv = np.linalg.inv(fact.r)
    std_beta = sigma_hat * np.sqrt(np.sum(rinv * rinv, axis=1))
    return DailyRecord(
        date=day,
        ok=True,
        lam=fit.lam.copy(),
        gamma=inner.gamma.copy(),
        beta=inner.beta.copy(),
        p=inner.p,
        r44=inner.r44,
        kappa=inner.kappa,
        rmse=math.sqrt(rss / m),
        sigma_hat=sigma_hat,
        basis_rotation=None if psi_prev is None else basis_rotation(psi_prev, fact.psi),
        fisher_std_beta=std_beta,
        fisher_std_gamma=np.full(4, sigma_hat),
        residuals=y - inner.fitted,
        objective=fit.objective,
        prev_objective=prev_obj,
        warm_fallback=fit.fell_back,
    )


def run_daily(history: YieldHistory, config: PipelineConfig = PipelineConfig(), progress_every: int = 0) -> list[DailyRecord]:
    """Fit every day: global search on the first good day, warm starts afterwards.

    A failing day is recorded with ``ok=False`` and the next day warm-starts
    from the last successful fit.
    """
    if len(history) < 1:
        raise ValueError("history is empty")
    if history.grid.m < 5:
        raise ConfigError("need at least 5 maturities to fit four linear factors and estimate sigma")
    records: list[DailyRecord] = []
    prev_lam = None
    psi_prev = None
    for t, day in enumerate(history.dates):
        y = history.yields[t]
        if np.isnan(y).any():
            records.append(DailyRecord(day, False, error="missing yields"))
            continue
        try:
            if prev_lam is None:
                fit = fit_global(history.grid, y, config.box, config.sigma, config.delta,
                                 model=config.model, config=config.outer)
                prev_obj = None
            else:
                prev_obj = reduced_objective(prev_lam, history.grid, y)
                fit = fit_warm(history.grid, y, prev_lam, config.box, config.sigma, config.delta,
                               model=config.model, config=config.outer)
            rec = _record(day, fit, y, psi_prev, prev_obj)
        except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
            log.warning("fit failed on %s: %s", day, exc)
            records.append(DailyRecord(day, False, error=str(exc)))
            continue
        records.append(rec)
        prev_lam = fit.lam
        psi_prev = fit.inner.fact.psi
        if progress_every and (t + 1) % progress_every == 0:
            log.info("fitted %d/%d days", t + 1, len(history))
    return records


def good(records: Sequence[DailyRecord]) -> list[DailyRecord]:
    return [r for r in records if r.ok]


# ------------------------------------------------------------- smoothness


@dataclass(frozen=True)
class ComponentSmoothness:
    rho: np.ndarray
    j: np.ndarray
    undefined: np.ndarray


def smoothness(series) -> ComponentSmoothness:
    """rho = std(diff)/std(level); J = q95(|diff|)/IQR(level), per column."""
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 3:
        raise ValueError("smoothness needs at least 3 observations")
    d = np.diff(x, axis=0)
    sd = np.std(x, axis=0, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    iqr = q75 - q25
    undefined = (sd == 0.0) | (iqr == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(sd > 0.0, np.std(d, axis=0, ddof=1) / sd, np.nan)
        jv = np.where(iqr > 0.0, np.percentile(np.abs(d), 95, axis=0) / iqr, np.nan)
    return ComponentSmoothness(rho, jv, undefined)


@dataclass(frozen=True)
class SmoothnessReport:
    beta: ComponentSmoothness
    gamma: ComponentSmoothness
    rho_ratio: np.ndarray
    j_ratio: np.ndarray

    def rows(self):
        for k in range(4):
            yield (k + 1, self.beta.rho[k], self.gamma.rho[k], self.rho_ratio[k],
                   self.beta.j[k], self.gamma.j[k], self.j_ratio[k])


def smoothness_report(records: Sequence[DailyRecord]) -> SmoothnessReport:
    ok = good(records)
    b = smoothness(np.array([r.beta for r in ok]))
    g = smoothness(np.array([r.gamma for r in ok]))
    with np.errstate(divide="ignore", invalid="ignore"):
        return SmoothnessReport(b, g, b.rho / g.rho, b.j / g.j)


# ------------------------------------------------------------ fit quality


@dataclass(frozen=True)
class QualityBlock:
    n: int
    median_rmse: float
    p95_rmse: float
    max_rmse: float
    median_max_abs_error: float


@dataclass(frozen=True)
class FitQuality:
    overall: QualityBlock
    low_r44: QualityBlock
    high_r44: QualityBlock
    r44_median: float
    tenors: tuple[str, ...]
    bias: np.ndarray
    rmse_by_tenor: np.ndarray
    spearman_rmse_r44: float


def _block(rmse: np.ndarray, maxerr: np.ndarray) -> QualityBlock:
    if rmse.size == 0:
        return QualityBlock(0, math.nan, math.nan, math.nan, math.nan)
    return QualityBlock(int(rmse.size), float(np.median(rmse)), float(np.percentile(rmse, 95)),
                        float(np.max(rmse)), float(np.median(maxerr)))


def fit_quality(records: Sequence[DailyRecord], tenors: Sequence[str] = ()) -> FitQuality:
    """RMSE summaries overall and split at the median R44 (low half: R44 <= median)."""
    ok = good(records)
    if not ok:
        raise ValueError("no successful fits")
    rmse = np.array([r.rmse for r in ok])
    r44 = np.array([r.r44 for r in ok])
    res = np.array([r.residuals for r in ok])
    maxerr = np.max(np.abs(res), axis=1)
    med = float(np.median(r44))
    low = r44 <= med
    if rmse.size > 2 and np.ptp(rmse) > 0 and np.ptp(r44) > 0:
        rho = float(spearmanr(rmse, r44).statistic)
    else:
        rho = math.nan
    return FitQuality(
        overall=_block(rmse, maxerr),
        low_r44=_block(rmse[low], maxerr[low]),
        high_r44=_block(rmse[~low], maxerr[~low]),
        r44_median=med,
        tenors=tuple(tenors),
        bias=res.mean(axis=0),
        rmse_by_tenor=np.sqrt(np.mean(res ** 2, axis=0)),
        spearman_rmse_r44=rho,
    )


# ----------------------------------------------------------------- bands


@dataclass(frozen=True)
class FisherBands:
    dates: tuple[dt.date, ...]
    std_beta: np.ndarray
    std_gamma: np.ndarray
    ratio: np.ndarray  # mean std(beta_j) / mean std(gamma_j)


def fisher_bands(records: Sequence[DailyRecord]) -> FisherBands:
    ok = good(records)
    sb = np.array([r.fisher_std_beta for r in ok])
    sg = np.array([r.fisher_std_gamma for r in ok])
    return FisherBands(tuple(r.date for r in ok), sb, sg, sb.mean(axis=0) / sg.mean(axis=0))


# --------------------------------------------------------------- monthly


@dataclass(frozen=True)
class MonthlyHistory:
    months: tuple[str, ...]
    beta: np.ndarray
    gamma: np.ndarray


def monthly_downsample(records: Sequence[DailyRecord]) -> MonthlyHistory:
    """Last successful record of each calendar month."""
    last: dict[tuple[int, int], DailyRecord] = {}
    for r in good(records):
        last[(r.date.year, r.date.month)] = r
    keys = sorted(last)
    return MonthlyHistory(
        tuple(f"{y:04d}-{m:02d}" for y, m in keys),
        np.array([last[k].beta for k in keys]).reshape(len(keys), 4),
        np.array([last[k].gamma for k in keys]).reshape(len(keys), 4),
    )


# ---------------------------------------------------------------- writers


def write_outputs(records: Sequence[DailyRecord], out_dir, tenors: Sequence[str]) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    p = out / "records.jsonl"
    with p.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    paths["records"] = p

    ok = good(records)
    if not ok:
        return paths
    fq = fit_quality(records, tenors)
    rows = []
    for name, blk in (("overall", fq.overall), ("low_r44", fq.low_r44), ("high_r44", fq.high_r44)):
        rows.append(("summary", name, blk.n, blk.median_rmse * BP, blk.p95_rmse * BP,
                     blk.max_rmse * BP, blk.median_max_abs_error * BP))
    for t, b, e in zip(fq.tenors, fq.bias, fq.rmse_by_tenor):
        rows.append(("tenor", t, len(ok), b * BP, e * BP, None, None))
    rows.append(("spearman_rmse_r44", "", len(ok), fq.spearman_rmse_r44, None, None, None))
    rows.append(("r44_median", "", len(ok), fq.r44_median, None, None, None))
    paths["fit_quality"] = write_csv(
        out / "fit_quality.csv",
        ("section", "name", "n", "a_bp", "b_bp", "c_bp", "d_bp"),
        rows,
    )
    if len(ok) >= 3:
        sm = smoothness_report(records)
        paths["smoothness"] = write_csv(
            out / "smoothness.csv",
            ("component", "rho_beta", "rho_gamma", "rho_ratio", "j_beta", "j_gamma", "j_ratio"),
            sm.rows(),
        )
    fb = fisher_bands(records)
    paths["bands"] = write_csv(
        out / "bands.csv",
        ("date", *(f"std_beta{k}" for k in range(1, 5)), *(f"std_gamma{k}" for k in range(1, 5))),
        ((d.isoformat(), *sb, *sg) for d, sb, sg in zip(fb.dates, fb.std_beta, fb.std_gamma)),
    )
    mh = monthly_downsample(records)
    paths["monthly_beta"] = write_csv(out / "monthly_beta.csv", ("month", "beta1", "beta2", "beta3", "beta4"),
                                      ((m, *b) for m, b in zip(mh.months, mh.beta)))
    paths["monthly_gamma"] = write_csv(out / "monthly_gamma.csv", ("month", "gamma1", "gamma2", "gamma3", "gamma4"),
                                       ((m, *g) for m, g in zip(mh.months, mh.gamma)))
    return paths


def reparametrization_gap(record: DailyRecord, grid: MaturityGrid) -> float:
    """||Phi beta - Psi gamma|| for one day (p=4 fits)."""
    phi = design_matrix(grid, record.lam)
    fact = thin_qr_positive(phi)
    return float(np.linalg.norm(phi.values @ record.beta - fact.psi @ record.gamma))
