"""Permutation engine and the permutation-calibrated max and HC tests.

All ``n t`` entries are shuffled jointly and cut into ``n`` consecutive blocks
of ``t``. Monte-Carlo plans shuffle a sorted copy of the entries, so the
permutation sample (and hence every estimate built from it) depends on the
multiset of values only, never on how they were arranged.

Replicates run in fixed-size chunks on a thread pool. Each replicate has its
own random stream keyed by ``(seed, replicate)``, which makes the output
bit-identical for any number of threads.
"""

from __future__ import annotations

import enum
import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import (
    Grid,
    Method,
    SampleMoments,
    StreamMatrix,
    TestResult,
    as_stream_matrix,
    build_data_grid,
    q_levels,
    sample_moments,
    standardize_counts,
)
from .errors import DegenerateStandardization, DomainError, PlanTooLarge, StatisticDegenerate

__all__ = [
    "Strategy",
    "PermutationPlan",
    "PermutedMeansSample",
    "PqEstimates",
    "derive_seed",
    "observed_means",
    "sample_permuted_means",
    "estimate_pq",
    "hat_N",
    "hat_T",
    "hc_statistics",
    "perm_hc_test",
    "perm_max_test",
    "max_quantile",
    "per_stream_pvalues",
    "bonferroni_flags",
]

CHUNK = 16
ENUMERATION_CAP = 8
_U64 = 1 << 64


class Strategy(str, enum.Enum):
    MONTE_CARLO = "MonteCarlo"
    FULL_ENUMERATION = "FullEnumeration"


@dataclass(frozen=True)
class PermutationPlan:
    """``replicates`` uniform permutations drawn from ``seed``.

    Under :attr:`Strategy.FULL_ENUMERATION` every one of the ``(n t)!``
    permutations is used instead and ``replicates`` is ignored.
    """

    replicates: int = 1000
    seed: int = 0
    strategy: Strategy = Strategy.MONTE_CARLO
    enumeration_cap: int = ENUMERATION_CAP

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if not 0 <= int(self.seed) < _U64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def exact(self) -> bool:
        return self.strategy is Strategy.FULL_ENUMERATION


@dataclass(frozen=True, eq=False)
class PermutedMeansSample:
    """``(B, n)`` array of permuted stream means and the plan that made it."""

    means: np.ndarray
    plan: PermutationPlan
    t: int

    @property
    def replicates(self) -> int:
        return self.means.shape[0]

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def exact(self) -> bool:
        return self.plan.exact


@dataclass(frozen=True, eq=False)
class PqEstimates:
    """Permutation estimates of ``P(Y_1(X^pi) - mean >= threshold_q)`` per grid point."""

    values: np.ndarray
    grid: Grid
    pool_size: int


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit child seed of ``seed`` for the integer path ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def observed_means(x) -> np.ndarray:
    """Stream means summed in the same order the shuffle kernel uses."""
    x = as_stream_matrix(x)
    flat = np.ascontiguousarray(x.values.reshape(1, -1))
    return _kernels.block_means(flat, x.n, x.t)[0]


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        return os.cpu_count() or 1
    if threads < 1:
        raise DomainError("threads must be >= 1")
    return int(threads)


def sample_permuted_means(x, plan: PermutationPlan, threads: int | None = None) -> PermutedMeansSample:
    x = as_stream_matrix(x)
    n, t = x.n, x.t
    N = n * t
    if plan.exact:
        if N > plan.enumeration_cap:
            raise PlanTooLarge(f"{N}! permutations exceed the enumeration cap ({plan.enumeration_cap} entries)")
        flat = x.values.ravel()
        rows = np.array([flat[list(p)] for p in itertools.permutations(range(N))])
        return PermutedMeansSample(_kernels.block_means(rows, n, t), plan, t)
    if N > _kernels.MAX_ENTRIES:
        raise PlanTooLarge("too many entries for the 32-bit bounded sampler")

    src = np.sort(x.values.ravel())
    B = plan.replicates
    out = np.empty((B, n))
    seed = np.uint64(plan.seed)
    starts = range(0, B, CHUNK)

    def run(s: int) -> None:
        _kernels.shuffle_block_means(src, n, t, seed, s, out[s : s + CHUNK])

    workers = min(_resolve_threads(threads), len(starts))
    if workers == 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    return PermutedMeansSample(out, plan, t)


def _levels(means: np.ndarray, moments: SampleMoments, n: int, t: int) -> np.ndarray:
    return q_levels(means, moments.mean, moments.std, n, t)


def _buckets(rows: np.ndarray, moments: SampleMoments, grid: Grid, n: int, t: int) -> np.ndarray:
    """Number of grid points each mean clears; equal to bucketing ``_levels``."""
    rows = np.ascontiguousarray(np.atleast_2d(rows), dtype=np.float64)
    return _kernels.bucket_means(rows, moments.mean, moments.std, 2.0 * math.log(n), t, grid.qs)


def _standardized_max(buckets: np.ndarray, p: np.ndarray) -> np.ndarray:
    stats, ok = _kernels.max_standardized(buckets, np.ascontiguousarray(p, dtype=np.float64))
    if not ok:
        raise DegenerateStandardization("zero variance with a nonzero centred count")
    return stats


def estimate_pq(
    sample: PermutedMeansSample,
    moments: SampleMoments,
    grid: Grid,
    n: int,
    t: int,
    observed: np.ndarray | None = None,
) -> PqEstimates:
    """Pooled exceedance fractions of the permuted means, one per grid point.

    Every block of every replicate enters the pool (blocks of a uniform
    permutation are exchangeable). ``observed`` means, when given, are pooled
    as well; :func:`perm_hc_test` does this for Monte-Carlo plans so that the
    estimate is a symmetric function of the observed and permuted data.
    """
    pool = sample.means if observed is None else np.vstack([np.asarray(observed)[None, :], sample.means])
    buckets = _buckets(pool, moments, grid, n, t)
    counts = _kernels.pooled_tail_counts(buckets, len(grid))
    return PqEstimates(counts / buckets.size, grid, buckets.size)


def hat_N(x, moments: SampleMoments, q: float) -> int:
    """Number of streams whose mean clears the ``q``-threshold."""
    x = as_stream_matrix(x)
    lev = _levels(observed_means(x), moments, x.n, x.t)
    return int(np.count_nonzero(lev >= q))


def hat_T(x, grid: Grid, pq: PqEstimates | np.ndarray, moments: SampleMoments | None = None) -> float:
    """Max over the grid of the standardized counts of ``x``."""
    x = as_stream_matrix(x)
    moments = sample_moments(x) if moments is None else moments
    p = pq.values if isinstance(pq, PqEstimates) else np.asarray(pq, dtype=np.float64)
    if p.size != len(grid):
        raise DomainError("estimates and grid are not aligned")
    lev = _levels(observed_means(x), moments, x.n, x.t)
    N = x.n - np.searchsorted(np.sort(lev), grid.qs, side="left")
    return float(standardize_counts(N, x.n, p).max())


def hc_statistics(rows: np.ndarray, moments: SampleMoments, grid: Grid, p: np.ndarray, t: int) -> np.ndarray:
    """HC statistic of each row of stream means against fixed tail probabilities ``p``."""
    rows = np.atleast_2d(rows)
    return _standardized_max(_buckets(rows, moments, grid, rows.shape[1], t), p)


def _check_calibratable(x: StreamMatrix) -> None:
    if x.t == 1:
        raise StatisticDegenerate("t = 1: stream means are invariant under permutation")


# Block means with the same entries summed in another order can differ in the
# last bits; comparisons treat values this close as ties.
TIE_RTOL = 1e-12


def _mean_tol(x: StreamMatrix) -> float:
    """Tie tolerance for stream means, scaled to the largest entry."""
    return TIE_RTOL * float(np.abs(x.values).max())


def _pvalue(observed: float, permuted: np.ndarray, exact: bool, tol: float = 0.0) -> float:
    hits = int(np.count_nonzero(permuted >= observed - tol))
    if exact:
        return hits / permuted.size
    return (1 + hits) / (permuted.size + 1)


def _hc_from_sample(
    x: StreamMatrix,
    sample: PermutedMeansSample,
    grid: Grid,
    p: np.ndarray | None = None,
    pq_sample: PermutedMeansSample | None = None,
) -> tuple[float, float]:
    """(statistic, p-value) of the HC test on a drawn sample.

    ``p`` fixes the tail probabilities (normal approximation); otherwise they
    are estimated from ``pq_sample`` (default: ``sample`` itself).
    """
    mom = sample_moments(x)
    obs = observed_means(x)
    buckets = _buckets(np.vstack([obs[None, :], sample.means]), mom, grid, x.n, x.t)
    if p is None and pq_sample is not None:
        p = estimate_pq(pq_sample, mom, grid, x.n, x.t, observed=None if pq_sample.exact else obs).values
    elif p is None:
        # same pool as estimate_pq: observed row included for Monte-Carlo plans only
        pool = buckets[1:] if sample.exact else buckets
        p = _kernels.pooled_tail_counts(pool, len(grid)) / pool.size
    stats = _standardized_max(buckets, p)
    tol = TIE_RTOL * abs(stats[0]) if math.isfinite(stats[0]) else 0.0
    return float(stats[0]), _pvalue(stats[0], stats[1:], sample.exact, tol)


def _max_from_sample(x: StreamMatrix, sample: PermutedMeansSample) -> tuple[float, float]:
    stat = float(observed_means(x).max())
    return stat, _pvalue(stat, sample.means.max(axis=1), sample.exact, _mean_tol(x))


def perm_hc_test(
    x,
    plan: PermutationPlan,
    d: float | None = None,
    *,
    reuse: bool = True,
    threads: int | None = None,
) -> TestResult:
    """Higher criticism test calibrated by permutation.

    One permutation sample serves both to estimate the tail probabilities and
    to calibrate the statistic when ``reuse`` is on (the default); otherwise a
    second, independent sample is drawn for the estimates.
    """
    start = time.perf_counter()
    x = as_stream_matrix(x)
    _check_calibratable(x)
    grid = build_data_grid(x, d)
    sample = sample_permuted_means(x, plan, threads)
    pq_sample = None
    if not reuse and not plan.exact:
        alt = PermutationPlan(plan.replicates, derive_seed(plan.seed, 1), plan.strategy, plan.enumeration_cap)
        pq_sample = sample_permuted_means(x, alt, threads)
    stat, pval = _hc_from_sample(x, sample, grid, pq_sample=pq_sample)
    return TestResult(
        statistic=stat,
        p_value=pval,
        replicates=sample.replicates,
        seed=plan.seed,
        method=Method.PERM_HC,
        grid_spacing=grid.spacing,
        elapsed_ms=(time.perf_counter() - start) * 1e3,
    )


def perm_max_test(x, plan: PermutationPlan, *, threads: int | None = None) -> TestResult:
    """Max-stream-mean test calibrated by permutation."""
    start = time.perf_counter()
    x = as_stream_matrix(x)
    _check_calibratable(x)
    sample = sample_permuted_means(x, plan, threads)
    stat, pval = _max_from_sample(x, sample)
    return TestResult(
        statistic=stat,
        p_value=pval,
        replicates=sample.replicates,
        seed=plan.seed,
        method=Method.PERM_MAX,
        elapsed_ms=(time.perf_counter() - start) * 1e3,
    )


def max_quantile(sample: PermutedMeansSample, level: float) -> float:
    """Smallest permuted maximum whose empirical CDF reaches ``level``."""
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    maxima = np.sort(sample.means.max(axis=1))
    k = round(level * maxima.size, 9)
    k = max(1, math.ceil(k))
    return float(maxima[k - 1])


def per_stream_pvalues(x, sample: PermutedMeansSample, *, pooled: bool = True) -> np.ndarray:
    """Upper-tail permutation p-value of each observed stream mean.

    ``pooled`` compares against every permuted block mean; otherwise only the
    first block of each replicate is used.
    """
    x = as_stream_matrix(x)
    ref = sample.means.ravel() if pooled else sample.means[:, 0]
    ref = np.sort(ref)
    hits = ref.size - np.searchsorted(ref, observed_means(x) - _mean_tol(x), side="left")
    if sample.exact:
        return hits / ref.size
    return (1 + hits) / (ref.size + 1)


def bonferroni_flags(pvals, alpha: float = 0.05) -> np.ndarray:
    """Streams significant at family-wise level ``alpha``."""
    p = np.asarray(pvals, dtype=np.float64)
    return p <= alpha / p.size
