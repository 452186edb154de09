"""Baselines that use knowledge of the null distribution.

The oracle HC test counts exceedances against the true null mean and standard
deviation, standardizes with the exact null tail probability, and is
calibrated by simulating null matrices. A calibration does not depend on the
observed data, so it is built once (:func:`calibrate_oracle`) and shared by
every test with the same null model and dimensions.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _kernels
from .core import (
    Grid,
    Method,
    SampleMoments,
    SparsityParams,
    TestResult,
    as_stream_matrix,
    build_data_grid,
)
from .errors import DomainError, SignalOutOfRange
from .permute import (
    PermutationPlan,
    _check_calibratable,
    _hc_from_sample,
    derive_seed,
    hc_statistics,
    sample_permuted_means,
)

__all__ = [
    "Family",
    "NullModel",
    "rho_star",
    "sparsity_size",
    "beta_from_size",
    "signal_theta",
    "oracle_pq_normal",
    "oracle_pq_gamma",
    "approx_pq",
    "OracleCalibration",
    "calibrate_oracle",
    "oracle_statistic",
    "oracle_hc_test",
    "approx_hc_test",
]

# tail probabilities below this underflow; flooring keeps every V_q finite
P_FLOOR = np.finfo(np.float64).tiny


class Family(str, enum.Enum):
    NORMAL = "normal"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class NullModel:
    """Standard normal, or exponential with rate ``lambda0``."""

    family: Family = Family.NORMAL
    lambda0: float = 1.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if not self.lambda0 > 0:
            raise DomainError("lambda0 must be positive")

    @classmethod
    def normal(cls) -> "NullModel":
        return cls(Family.NORMAL)

    @classmethod
    def exponential(cls, lambda0: float = 1.5) -> "NullModel":
        return cls(Family.EXPONENTIAL, lambda0)

    @property
    def mu0(self) -> float:
        return 0.0 if self.family is Family.NORMAL else 1.0 / self.lambda0

    @property
    def sigma0_sq(self) -> float:
        return 1.0 if self.family is Family.NORMAL else 1.0 / self.lambda0**2

    @property
    def theta_star(self) -> float:
        return math.inf if self.family is Family.NORMAL else self.lambda0

    def sample(self, rng: np.random.Generator, size, theta: float = 0.0) -> np.ndarray:
        """Draws from the tilted distribution with natural parameter ``theta``."""
        if self.family is Family.NORMAL:
            return rng.normal(theta, 1.0, size)
        if theta >= self.lambda0:
            raise SignalOutOfRange(f"theta={theta} >= lambda0={self.lambda0}")
        return rng.exponential(1.0 / (self.lambda0 - theta), size)

    def tail(self, qs: np.ndarray, n: int, t: int) -> np.ndarray:
        if self.family is Family.NORMAL:
            return oracle_pq_normal(qs, n)
        return oracle_pq_gamma(qs, n, t, self.lambda0)


def rho_star(beta: float) -> float:
    """Detection boundary in the sparse regime."""
    if not 0.5 < beta < 1.0:
        raise DomainError(f"beta must lie in (1/2, 1), got {beta}")
    if beta <= 0.75:
        return beta - 0.5
    return (1.0 - math.sqrt(1.0 - beta)) ** 2


def sparsity_size(n: int, beta: float) -> int:
    """``ceil(n^(1 - beta))``, exact when the power is an integer."""
    v = n ** (1.0 - beta)
    r = round(v)
    return int(r) if abs(v - r) <= 1e-9 * max(1.0, v) else math.ceil(v)


def beta_from_size(n: int, s: int) -> float:
    if n < 2 or not 1 <= s <= n:
        raise DomainError("need n >= 2 and 1 <= s <= n")
    return 1.0 - math.log(s) / math.log(n)


def signal_theta(tau: float, beta: float, n: int, t: int, model: NullModel) -> SparsityParams:
    """Natural parameter at ``tau`` times the minimal detectable strength."""
    if tau < 0:
        raise DomainError("tau must be >= 0")
    if n < 2 or t < 1:
        raise DomainError("need n >= 2 and t >= 1")
    rho = rho_star(beta)
    theta = tau * math.sqrt(2.0 * rho * math.log(n) / (model.sigma0_sq * t))
    if theta >= model.theta_star:
        raise SignalOutOfRange(
            f"theta={theta:.4g} >= {model.theta_star} (tau={tau}, t={t}): alternative undefined"
        )
    if model.family is Family.NORMAL:
        shift = theta
    else:
        shift = 1.0 / (model.lambda0 - theta) - 1.0 / model.lambda0
    return SparsityParams(
        beta=beta,
        r=tau * tau * rho,
        tau=tau,
        s=sparsity_size(n, beta),
        theta=theta,
        sigma0_sq=model.sigma0_sq,
        mean_shift=shift,
    )


def oracle_pq_normal(q, n: int):
    """``1 - Phi(sqrt(2 q log n))``."""
    q = np.asarray(q, dtype=np.float64)
    out = special.ndtr(-np.sqrt(2.0 * q * math.log(n)))
    return float(out) if out.ndim == 0 else out


def oracle_pq_gamma(q, n: int, t: int, lambda0: float):
    """``P(mean of t Exp(lambda0) >= mu0 + sigma0 sqrt(2 q log n / t))``.

    ``t * lambda0 * mean`` is Gamma(t, 1), so this is the regularized upper
    incomplete gamma function at ``t (1 + sqrt(2 q log n / t))``; the rate
    cancels.
    """
    if t < 1 or not lambda0 > 0:
        raise DomainError("need t >= 1 and lambda0 > 0")
    q = np.asarray(q, dtype=np.float64)
    mu0 = sd0 = 1.0 / lambda0
    thr = mu0 + sd0 * np.sqrt(2.0 * q * math.log(n) / t)
    out = special.gammaincc(t, t * lambda0 * thr)
    return float(out) if out.ndim == 0 else out


def approx_pq(qs, n: int) -> np.ndarray:
    """Normal-approximation tail probabilities, floored away from underflow."""
    return np.maximum(np.atleast_1d(oracle_pq_normal(qs, n)), P_FLOOR)


def _moments(model: NullModel) -> SampleMoments:
    return SampleMoments(model.mu0, model.sigma0_sq)


class _TailTable:
    """Oracle tail probabilities on the arithmetic grid ``k / d``, grown on demand."""

    def __init__(self, model: NullModel, n: int, t: int, d: float):
        self.model, self.n, self.t, self.d = model, n, t, d
        self.p = np.empty(0)

    def get(self, grid: Grid) -> np.ndarray:
        K = len(grid)
        if K > self.p.size:
            qs = np.arange(max(K, 2 * self.p.size)) / self.d
            self.p = np.maximum(self.model.tail(qs, self.n, self.t), P_FLOOR)
        return self.p[:K]


@dataclass(frozen=True, eq=False)
class OracleCalibration:
    """Sorted null distribution of the oracle statistic."""

    model: NullModel
    n: int
    t: int
    d: float
    null_stats: np.ndarray
    seed: int
    grid: Grid | None = None
    _table: _TailTable | None = field(default=None, repr=False)

    @property
    def samples(self) -> int:
        return self.null_stats.size

    def pvalue(self, stat: float) -> float:
        hits = self.null_stats.size - np.searchsorted(self.null_stats, stat, side="left")
        return (1 + int(hits)) / (self.null_stats.size + 1)


def _oracle_stat(values: np.ndarray, model: NullModel, grid: Grid | None, table: _TailTable | None, d) -> float:
    n, t = values.shape
    if grid is None:
        grid = build_data_grid(values, d)
        p = table.get(grid) if table is not None else np.maximum(model.tail(grid.qs, n, t), P_FLOOR)
    else:
        p = np.maximum(model.tail(grid.qs, n, t), P_FLOOR)
    means = _kernels.block_means(np.ascontiguousarray(values.reshape(1, -1)), n, t)
    return float(hc_statistics(means, _moments(model), grid, p, t)[0])


def oracle_statistic(x, model: NullModel, grid: Grid | None = None, d: float | None = None) -> float:
    """Max over the grid of ``(N_q - n p_q) / sqrt(n p_q (1 - p_q))`` with the true null."""
    return _oracle_stat(as_stream_matrix(x).values, model, grid, None, d)


def calibrate_oracle(
    model: NullModel,
    n: int,
    t: int,
    calib_samples: int = 10_000,
    seed: int = 0,
    *,
    grid: Grid | None = None,
    d: float | None = None,
    chunk: int = 64,
) -> OracleCalibration:
    """Simulate ``calib_samples`` null matrices and record the oracle statistic.

    Chunk ``c`` of matrices is drawn from the seed path ``(seed, c)``, so the
    result does not depend on how chunks are scheduled.
    """
    if calib_samples < 1:
        raise DomainError("calib_samples must be >= 1")
    if n < 2:
        raise DomainError("oracle HC needs n >= 2")
    d = math.log(n) if d is None else float(d)
    table = _TailTable(model, n, t, d)
    stats = np.empty(calib_samples)
    for c, lo in enumerate(range(0, calib_samples, chunk)):
        hi = min(lo + chunk, calib_samples)
        rng = np.random.default_rng(derive_seed(seed, c))
        block = model.sample(rng, (hi - lo, n, t))
        for k in range(hi - lo):
            stats[lo + k] = _oracle_stat(block[k], model, grid, table, d)
    return OracleCalibration(model, n, t, d, np.sort(stats), int(seed), grid, table)


def oracle_hc_test(
    x,
    model: NullModel,
    grid: Grid | None = None,
    calib_samples: int = 10_000,
    seed: int = 0,
    *,
    d: float | None = None,
    calibration: OracleCalibration | None = None,
) -> TestResult:
    """Oracle HC test. ``grid=None`` uses the data-dependent grid of each matrix."""
    start = time.perf_counter()
    x = as_stream_matrix(x)
    if calibration is None:
        calibration = calibrate_oracle(model, x.n, x.t, calib_samples, seed, grid=grid, d=d)
    cal = calibration
    if (cal.n, cal.t) != (x.n, x.t) or cal.model != model:
        raise DomainError("calibration was built for a different null model or shape")
    if cal.grid is None and d is not None and not math.isclose(d, cal.d):
        raise DomainError("calibration was built for a different grid divisor")
    table = cal._table or _TailTable(model, x.n, x.t, cal.d)
    stat = _oracle_stat(x.values, model, cal.grid, table, cal.d)
    return TestResult(
        statistic=stat,
        p_value=cal.pvalue(stat),
        replicates=cal.samples,
        seed=cal.seed,
        method=Method.ORACLE_HC,
        grid_spacing=(1.0 / cal.d) if cal.grid is None else cal.grid.spacing,
        elapsed_ms=(time.perf_counter() - start) * 1e3,
    )


def approx_hc_test(x, plan: PermutationPlan, d: float | None = None, *, threads: int | None = None) -> TestResult:
    """HC calibrated by permutation but standardized with normal tail probabilities."""
    start = time.perf_counter()
    x = as_stream_matrix(x)
    _check_calibratable(x)
    grid = build_data_grid(x, d)
    sample = sample_permuted_means(x, plan, threads)
    stat, pval = _hc_from_sample(x, sample, grid, p=approx_pq(grid.qs, x.n))
    return TestResult(
        statistic=stat,
        p_value=pval,
        replicates=sample.replicates,
        seed=plan.seed,
        method=Method.APPROX_HC,
        grid_spacing=grid.spacing,
        elapsed_ms=(time.perf_counter() - start) * 1e3,
    )
