"""Sliding-window monitoring of a panel of series.

Each window of ``t`` consecutive days becomes a stream matrix. Depending on
the mode the window is tested directly or through the residuals of a pooled
AR(1) fit, after streams that are obvious outliers under the permutation max
test have been set aside. Overlapping windows give dependent p-values; they
are reported per window and never combined.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import Method, StreamMatrix, TestResult, as_stream_matrix, build_data_grid
from .errors import DomainError, EverythingAnomalous, NonStationaryFit, PermHCError
from .oracle import approx_pq
from .permute import (
    PermutationPlan,
    _check_calibratable,
    _hc_from_sample,
    _mean_tol,
    derive_seed,
    max_quantile,
    observed_means,
    per_stream_pvalues,
    sample_permuted_means,
)

__all__ = [
    "Mode",
    "SeriesPanel",
    "Ar1Fit",
    "WindowReport",
    "extract_window",
    "fit_ar1",
    "residuals",
    "exclude_clear_outliers",
    "window_seed",
    "scan",
    "write_scan_csv",
    "scan_json",
]


class Mode(str, enum.Enum):
    RAW = "raw"
    RESIDUAL = "residual"
    APPROACH_A = "approach-a"
    APPROACH_B = "approach-b"


@dataclass(frozen=True, eq=False)
class SeriesPanel:
    """``n`` series observed on the same ``T`` days."""

    values: np.ndarray
    stream_labels: tuple[str, ...] = ()
    day_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        v = StreamMatrix(self.values).values
        object.__setattr__(self, "values", v)
        n, T = v.shape
        labels = tuple(self.stream_labels) or tuple(str(i) for i in range(n))
        days = tuple(self.day_labels) or tuple(str(j + 1) for j in range(T))
        if len(labels) != n or len(days) != T:
            raise DomainError("labels do not match the panel shape")
        object.__setattr__(self, "stream_labels", labels)
        object.__setattr__(self, "day_labels", days)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Ar1Fit:
    """Pooled AR(1) fit ``x_j - mu = a (x_{j-1} - mu) + e`` of one window."""

    a_hat: float
    mu_hat: float
    intercept: float
    n_obs: int
    degenerate: bool = False


@dataclass
class WindowReport:
    w: int
    start: str
    mode: Mode
    fit: Ar1Fit | None = None
    excluded: list[int] = field(default_factory=list)
    excluded_labels: list[str] = field(default_factory=list)
    perm_hc: TestResult | None = None
    approx_hc: TestResult | None = None
    per_stream_pvalues: np.ndarray | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "start": self.start,
            "mode": self.mode.value,
            "fit": None if self.fit is None else asdict(self.fit),
            "excluded": list(self.excluded),
            "excluded_labels": list(self.excluded_labels),
            "perm_hc": None if self.perm_hc is None else self.perm_hc.to_dict(),
            "approx_hc": None if self.approx_hc is None else self.approx_hc.to_dict(),
            "per_stream_pvalues": None
            if self.per_stream_pvalues is None
            else [None if math.isnan(p) else p for p in self.per_stream_pvalues.tolist()],
            "error": self.error,
        }


def extract_window(panel: SeriesPanel, w: int, t: int) -> StreamMatrix:
    """Days ``w .. w + t - 1`` (``w`` is 1-based)."""
    if t < 1 or not 1 <= w <= panel.T - t + 1:
        raise DomainError(f"window w={w}, t={t} outside a panel of {panel.T} days")
    return StreamMatrix(panel.values[:, w - 1 : w - 1 + t])


def fit_ar1(x) -> Ar1Fit:
    """Least squares over all within-window lag pairs, via ``x_j = c + a x_{j-1}``."""
    x = as_stream_matrix(x)
    if x.t < 3:
        raise DomainError("AR(1) fit needs t >= 3")
    lag = x.values[:, :-1].ravel()
    resp = x.values[:, 1:].ravel()
    if np.all(lag == lag[0]):
        c = float(resp.mean())
        return Ar1Fit(0.0, c, c, lag.size, degenerate=True)
    lbar, rbar = lag.mean(), resp.mean()
    dl = lag - lbar
    a = float(np.dot(dl, resp - rbar) / np.dot(dl, dl))
    c = float(rbar - a * lbar)
    if abs(1.0 - a) < 1e-10:
        raise NonStationaryFit(f"a_hat={a}")
    return Ar1Fit(a, c / (1.0 - a), c, lag.size)


def residuals(x, fit: Ar1Fit) -> StreamMatrix:
    """``x_j - mu - a (x_{j-1} - mu)`` for ``j = 2..t``; one column shorter than ``x``."""
    v = as_stream_matrix(x).values
    if v.shape[1] < 2:
        raise DomainError("residuals need t >= 2")
    return StreamMatrix(v[:, 1:] - fit.intercept - fit.a_hat * v[:, :-1])


def exclude_clear_outliers(
    x, plan: PermutationPlan, level: float = 0.95, *, threads: int | None = None
) -> tuple[StreamMatrix, list[int]]:
    """Drop streams whose mean is above the ``level`` quantile of the permuted maximum."""
    x = as_stream_matrix(x)
    thr = max_quantile(sample_permuted_means(x, plan, threads), level)
    out = np.flatnonzero(observed_means(x) > thr + _mean_tol(x))
    if out.size == x.n:
        raise EverythingAnomalous("every stream exceeds the exclusion threshold")
    keep = np.setdiff1d(np.arange(x.n), out)
    return x.rows(keep), out.tolist()


def window_seed(seed: int, w: int) -> int:
    """Seed of the HC tests in window ``w``."""
    return derive_seed(seed, w)


def _exclusion_seed(seed: int, w: int) -> int:
    return derive_seed(seed, w, 0)


def _paired_tests(data: StreamMatrix, plan: PermutationPlan, d, threads, per_stream: bool):
    _check_calibratable(data)
    grid = build_data_grid(data, d)
    sample = sample_permuted_means(data, plan, threads)
    results = []
    for method, p in ((Method.PERM_HC, None), (Method.APPROX_HC, approx_pq(grid.qs, data.n))):
        stat, pval = _hc_from_sample(data, sample, grid, p=p)
        results.append(TestResult(stat, pval, sample.replicates, plan.seed, method, grid.spacing))
    psp = per_stream_pvalues(data, sample) if per_stream else None
    return results[0], results[1], psp


def scan(
    panel: SeriesPanel,
    t: int,
    mode: Mode | str = Mode.RAW,
    plan: PermutationPlan = PermutationPlan(),
    d: float | None = None,
    level: float | None = 0.95,
    *,
    per_stream: bool = False,
    threads: int | None = None,
    windows: Sequence[int] | None = None,
) -> list[WindowReport]:
    """Test every window (or the listed 1-based ``windows``).

    Modes:

    * ``raw`` - exclude on the raw window, test the rest.
    * ``residual`` - fit AR(1) on the window, exclude on residual means, test
      the remaining residuals.
    * ``approach-a`` - exclude on raw means, fit on the kept streams, test
      their residuals.
    * ``approach-b`` - fit, exclude on residual means, refit on the kept raw
      streams, test the refitted residuals.

    ``level=None`` (or ``>= 1``) disables exclusion. Window ``w`` runs its HC
    tests with seed ``window_seed(plan.seed, w)``; exclusion uses a separate
    child seed. Errors are recorded per window and the scan continues.
    """
    mode = Mode(mode)
    excl_on = level is not None and level < 1.0
    ws = range(1, panel.T - t + 2) if windows is None else windows
    reports = []
    for w in ws:
        x = extract_window(panel, w, t)
        rep = WindowReport(w=w, start=panel.day_labels[w - 1], mode=mode)
        test_plan = PermutationPlan(plan.replicates, window_seed(plan.seed, w), plan.strategy, plan.enumeration_cap)
        excl_plan = PermutationPlan(plan.replicates, _exclusion_seed(plan.seed, w), plan.strategy, plan.enumeration_cap)

        def exclude(m: StreamMatrix) -> list[int]:
            if not excl_on:
                return []
            return exclude_clear_outliers(m, excl_plan, level, threads=threads)[1]

        try:
            if mode is Mode.RAW:
                rep.excluded = exclude(x)
                kept = np.setdiff1d(np.arange(x.n), rep.excluded)
                data = x.rows(kept)
            elif mode is Mode.RESIDUAL:
                rep.fit = fit_ar1(x)
                res = residuals(x, rep.fit)
                rep.excluded = exclude(res)
                kept = np.setdiff1d(np.arange(x.n), rep.excluded)
                data = res.rows(kept)
            else:
                if mode is Mode.APPROACH_A:
                    rep.excluded = exclude(x)
                else:
                    rep.excluded = exclude(residuals(x, fit_ar1(x)))
                kept = np.setdiff1d(np.arange(x.n), rep.excluded)
                rep.fit = fit_ar1(x.rows(kept))
                data = residuals(x.rows(kept), rep.fit)
            rep.excluded_labels = [panel.stream_labels[i] for i in rep.excluded]
            rep.perm_hc, rep.approx_hc, psp = _paired_tests(data, test_plan, d, threads, per_stream)
            if psp is not None:
                full = np.full(x.n, np.nan)
                full[kept] = psp
                rep.per_stream_pvalues = full
        except PermHCError as exc:
            rep.error = f"{type(exc).__name__}: {exc}"
        reports.append(rep)
    return reports


SCAN_COLUMNS = ("w", "start_date", "mode", "a_hat", "mu_hat", "n_excluded", "p_perm_hc", "p_approx_hc")


def write_scan_csv(reports: Sequence[WindowReport], fh: io.TextIOBase) -> None:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(SCAN_COLUMNS)
    for r in reports:
        wr.writerow([
            r.w,
            r.start,
            r.mode.value,
            "" if r.fit is None else repr(r.fit.a_hat),
            "" if r.fit is None else repr(r.fit.mu_hat),
            len(r.excluded),
            "" if r.perm_hc is None else repr(r.perm_hc.p_value),
            "" if r.approx_hc is None else repr(r.approx_hc.p_value),
        ])


def scan_json(reports: Sequence[WindowReport], config: dict | None = None) -> str:
    body = {"config": config or {}, "windows": [r.to_dict() for r in reports]}
    return json.dumps(body, indent=2, sort_keys=True)
