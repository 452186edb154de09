"""Domain types and the deterministic statistics shared by every test.

Everything here is a pure function of its inputs. Stream means are compared
to thresholds through their *q-level*: a stream whose centred, scaled mean is
``z >= 0`` clears the threshold of every grid point ``q <= t z^2 / (2 log n)``.
Counting on the level scale instead of the threshold scale keeps the
comparison exact at the candidate points ``q = t z_i^2 / (2 log n)``.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .errors import DegenerateGridWarning, DegenerateStandardization, DomainError

__all__ = [
    "StreamMatrix",
    "SampleMoments",
    "Grid",
    "GridKind",
    "Method",
    "TestResult",
    "SparsityParams",
    "as_stream_matrix",
    "stream_means",
    "sample_moments",
    "count_exceedances",
    "standardized_count",
    "standardize_counts",
    "build_theorem_grid",
    "build_data_grid",
    "classic_hc",
    "q_levels",
    "counts_on_grid",
]


@dataclass(frozen=True, eq=False)
class StreamMatrix:
    """``n`` streams (rows) of ``t`` finite observations (columns)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise DomainError(f"stream matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"stream matrix needs n >= 1 and t >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            i, j = np.argwhere(~np.isfinite(arr))[0]
            raise DomainError(f"non-finite entry at stream {i}, time {j}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]

    def rows(self, index) -> "StreamMatrix":
        """Sub-matrix made of the selected streams."""
        return StreamMatrix(self.values[np.asarray(index)])

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def as_stream_matrix(x) -> StreamMatrix:
    return x if isinstance(x, StreamMatrix) else StreamMatrix(x)


@dataclass(frozen=True)
class SampleMoments:
    """Pooled mean and population variance (divisor ``n t``)."""

    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


class GridKind(str, enum.Enum):
    THEOREM = "TheoremGrid"
    DATA = "DataDependentGrid"


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing threshold exponents, starting at 0."""

    qs: np.ndarray
    kind: GridKind
    spacing: float | None = None

    def __post_init__(self) -> None:
        qs = np.array(self.qs, dtype=np.float64, copy=True)
        if qs.ndim != 1 or qs.size == 0:
            raise DomainError("grid must be a non-empty 1-D sequence")
        if qs[0] != 0.0:
            raise DomainError("grid must start at 0")
        if qs.size > 1 and not np.all(np.diff(qs) > 0):
            raise DomainError("grid must be strictly increasing")
        qs.setflags(write=False)
        object.__setattr__(self, "qs", qs)

    def __len__(self) -> int:
        return self.qs.size


class Method(str, enum.Enum):
    PERM_HC = "PermHC"
    PERM_MAX = "PermMax"
    ORACLE_HC = "OracleHC"
    APPROX_HC = "ApproxHC"

    @property
    def cli_name(self) -> str:
        return _CLI_NAMES[self]

    @classmethod
    def parse(cls, name: str) -> "Method":
        key = name.strip()
        for m in cls:
            if key in (m.value, m.cli_name, m.name):
                return m
        raise DomainError(f"unknown method {name!r}")


_CLI_NAMES = {
    Method.PERM_HC: "perm-hc",
    Method.PERM_MAX: "perm-max",
    Method.ORACLE_HC: "oracle-hc",
    Method.APPROX_HC: "approx-hc",
}


@dataclass(frozen=True)
class TestResult:
    """Outcome of one calibrated test."""

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    p_value: float
    replicates: int
    seed: int
    method: Method
    grid_spacing: float | None = None
    elapsed_ms: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["method"] = self.method.value
        d["statistic"] = _json_float(self.statistic)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _json_float(v: float):
    # JSON has no infinities; keep them readable
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass(frozen=True)
class SparsityParams:
    """Sparsity / signal-strength parameterization of an alternative."""

    beta: float
    r: float
    tau: float
    s: int
    theta: float
    sigma0_sq: float
    mean_shift: float = 0.0


def stream_means(x) -> np.ndarray:
    """Per-stream average, shape ``(n,)``."""
    return as_stream_matrix(x).values.mean(axis=1)


def sample_moments(x) -> SampleMoments:
    v = as_stream_matrix(x).values
    first = v.flat[0]
    if np.all(v == first):
        # exact; a summed mean of identical values can be off by an ulp
        return SampleMoments(float(first), 0.0)
    mean = float(v.mean())
    return SampleMoments(mean, float(np.mean((v - mean) ** 2)))


def count_exceedances(means, threshold: float, strict: bool = False) -> int:
    m = np.asarray(means, dtype=np.float64)
    return int(np.count_nonzero(m > threshold if strict else m >= threshold))


def standardized_count(N: int, n: int, p: float) -> float:
    """``(N - n p) / sqrt(n p (1 - p))`` with ``0/0 = 0``.

    Raises :class:`DegenerateStandardization` for a zero denominator under a
    nonzero numerator.
    """
    if not 0 <= N <= n:
        raise DomainError(f"count {N} outside [0, {n}]")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p} outside [0, 1]")
    num = N - n * p
    den = math.sqrt(n * p * (1.0 - p))
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise DegenerateStandardization(f"N={N}, n={n}, p={p}")
    return num / den


def standardize_counts(N: np.ndarray, n: int, p: np.ndarray) -> np.ndarray:
    """Vectorised :func:`standardized_count`; ``N`` broadcasts against ``p``."""
    N = np.asarray(N, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    num = N - n * p
    den = np.sqrt(n * p * (1.0 - p))
    zero = den == 0.0
    if np.any(zero & (num != 0.0)):
        raise DegenerateStandardization("zero variance with a nonzero centred count")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
    return out


def build_theorem_grid(k: int) -> Grid:
    """``{0, 1/k, ..., 1}``."""
    if k < 1:
        raise DomainError("k must be >= 1")
    return Grid(np.arange(k + 1) / k, GridKind.THEOREM, spacing=1.0 / k)


def _snap_ceil(v: float) -> int:
    # products that are integers in exact arithmetic must not gain a point
    r = round(v)
    if abs(v - r) <= 1e-9 * max(1.0, abs(v)):
        return int(r)
    return math.ceil(v)


def build_data_grid(x, d: float | None = None) -> Grid:
    """Grid with spacing ``1/d`` reaching ``M^2 t / (2 log n)``.

    ``M`` is the largest entry expressed in pooled standard deviations above
    the pooled mean, so the top point has no stream mean above its threshold.
    ``d`` defaults to ``log n``.
    """
    x = as_stream_matrix(x)
    n, t = x.n, x.t
    if n < 2:
        raise DomainError("data-dependent grid needs n >= 2")
    logn = math.log(n)
    if d is None:
        d = logn
    if not (d > 0 and math.isfinite(d)):
        raise DomainError(f"grid divisor must be positive, got {d}")
    mom = sample_moments(x)
    if mom.variance == 0.0:
        warnings.warn("constant matrix: grid reduced to {0}", DegenerateGridWarning, stacklevel=2)
        return Grid(np.zeros(1), GridKind.DATA, spacing=1.0 / d)
    M = (float(x.values.max()) - mom.mean) / mom.std
    q_max = M * M * t / (2.0 * logn)
    k = max(_snap_ceil(q_max * d), 0)
    return Grid(np.arange(k + 1) / d, GridKind.DATA, spacing=1.0 / d)


def q_levels(means, center: float, scale: float, n: int, t: int) -> np.ndarray:
    """Largest ``q`` whose threshold each mean clears.

    A mean clears the threshold ``center + scale sqrt(2 q log n / t)`` exactly
    when ``q <= level``. Means below ``center`` get ``-inf`` (they never
    count, not even at ``q = 0``); with ``scale == 0`` a mean at ``center``
    clears every threshold.
    """
    diff = np.asarray(means, dtype=np.float64) - center
    if scale == 0.0:
        return np.where(diff >= 0.0, np.inf, -np.inf)
    z = diff / scale
    lev = t * z * z / (2.0 * math.log(n))
    return np.where(z >= 0.0, lev, -np.inf)


def counts_on_grid(levels: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """``N_q = #{level >= q}`` for each ``q`` in ``qs``."""
    srt = np.sort(np.asarray(levels, dtype=np.float64))
    return srt.size - np.searchsorted(srt, np.asarray(qs, dtype=np.float64), side="left")


def classic_hc(pvals) -> float:
    """Ordered-p-value higher criticism over the p-values below 1/2.

    Returns ``-inf`` when no p-value is below 1/2. Terms with a zero p-value
    have no finite standardization and are skipped.
    """
    p = np.sort(np.asarray(pvals, dtype=np.float64))
    n = p.size
    if n == 0:
        raise DomainError("classic_hc needs at least one p-value")
    if np.any((p < 0) | (p > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    i_plus = int(np.count_nonzero(p < 0.5))
    if i_plus == 0:
        return -math.inf
    i = np.arange(1, i_plus + 1)
    pi = p[:i_plus]
    ok = pi > 0.0
    if not np.any(ok):
        return -math.inf
    h = math.sqrt(n) * (i[ok] / n - pi[ok]) / np.sqrt(pi[ok] * (1.0 - pi[ok]))
    return float(h.max())
