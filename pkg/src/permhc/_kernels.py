"""Compiled inner loops for the permutation engine.

Each replicate ``b`` draws from its own SplitMix64 stream keyed by
``(seed, b)``, so a replicate's output does not depend on which worker ran it
or in what order. Bounded integers use Lemire's multiply-and-reject method on
32-bit words, which is exactly uniform for ranges below ``2**32``.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_MASK32 = np.uint64(0xFFFFFFFF)
_TWO32 = np.uint64(1 << 32)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_S32 = np.uint64(32)

MAX_ENTRIES = (1 << 32) - 1


@nb.njit(inline="always", cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _MUL1
    z = (z ^ (z >> _S27)) * _MUL2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def stream_key(seed, b):
    """Initial SplitMix64 state of replicate ``b``."""
    return _mix64(np.uint64(seed) ^ _mix64(np.uint64(b) + _GOLDEN))


@nb.njit(inline="always", cache=True)
def _bounded(state, r):
    # uniform integer in [0, r) for 1 <= r <= 2**32; returns (state, value)
    state = state + _GOLDEN
    m = (_mix64(state) >> _S32) * r
    low = m & _MASK32
    if low < r:
        thresh = (_TWO32 - r) % r
        while low < thresh:
            state = state + _GOLDEN
            m = (_mix64(state) >> _S32) * r
            low = m & _MASK32
    return state, np.int64(m >> _S32)


@nb.njit(cache=True)
def draw_bounded(seed, b, bounds):
    """Sequence of bounded draws from replicate ``b``'s stream (test hook)."""
    state = stream_key(seed, b)
    out = np.empty(bounds.size, dtype=np.int64)
    for k in range(bounds.size):
        state, out[k] = _bounded(state, np.uint64(bounds[k]))
    return out


@nb.njit(nogil=True, cache=True)
def shuffle_block_means(src, n, t, seed, start, out):
    """Block means of ``out.shape[0]`` shuffles of ``src``, replicates from ``start``.

    Fisher-Yates from the top: once position ``i`` is swapped it is final, so
    its value is added to block ``i // t`` on the spot. The loop stops at
    ``i = t``; the first ``t`` slots then hold block 0 in some order.
    """
    N = n * t
    buf = np.empty(N)
    for r in range(out.shape[0]):
        for k in range(N):
            buf[k] = src[k]
        state = stream_key(seed, np.uint64(start + r))
        for blk in range(n):
            out[r, blk] = 0.0
        blk = n - 1
        left = t
        for i in range(N - 1, t - 1, -1):
            state, j = _bounded(state, np.uint64(i + 1))
            v = buf[j]
            buf[j] = buf[i]
            buf[i] = v
            out[r, blk] += v
            left -= 1
            if left == 0:
                blk -= 1
                left = t
        s = 0.0
        for k in range(t - 1, -1, -1):
            s += buf[k]
        out[r, 0] = s
        for blk in range(n):
            out[r, blk] /= t


@nb.njit(cache=True)
def block_means(rows, n, t):
    """Block means of each row, summed in the same order as the shuffle kernel."""
    R = rows.shape[0]
    out = np.empty((R, n))
    for r in range(R):
        for blk in range(n):
            s = 0.0
            for k in range(blk * t + t - 1, blk * t - 1, -1):
                s += rows[r, k]
            out[r, blk] = s / t
    return out


@nb.njit(cache=True)
def bucket_levels(levels, qs):
    """``#{k : qs[k] <= level}`` for every level (binary search)."""
    R, n = levels.shape
    K = qs.size
    out = np.empty((R, n), dtype=np.int32)
    for r in range(R):
        for i in range(n):
            v = levels[r, i]
            lo = 0
            hi = K
            while lo < hi:
                mid = (lo + hi) >> 1
                if qs[mid] <= v:
                    lo = mid + 1
                else:
                    hi = mid
            out[r, i] = lo
    return out


@nb.njit(cache=True)
def pooled_tail_counts(buckets, K):
    """``counts[k] = #{entries with bucket > k}`` over the whole array."""
    hist = np.zeros(K + 1, dtype=np.int64)
    R, n = buckets.shape
    for r in range(R):
        for i in range(n):
            hist[buckets[r, i]] += 1
    counts = np.empty(K, dtype=np.int64)
    acc = 0
    for k in range(K, 0, -1):
        acc += hist[k]
        counts[k - 1] = acc
    return counts


@nb.njit(cache=True)
def max_standardized(buckets, p):
    """Per row: ``max_k (N_k - n p_k) / sqrt(n p_k (1 - p_k))`` with ``0/0 = 0``.

    Returns ``(stats, ok)``; ``ok`` is False if some zero-variance point had a
    nonzero numerator.
    """
    R, n = buckets.shape
    K = p.size
    stats = np.empty(R)
    hist = np.empty(K + 1, dtype=np.int64)
    ok = True
    for r in range(R):
        for k in range(K + 1):
            hist[k] = 0
        for i in range(n):
            hist[buckets[r, i]] += 1
        best = -np.inf
        acc = 0
        for k in range(K - 1, -1, -1):
            acc += hist[k + 1]
            num = acc - n * p[k]
            den = np.sqrt(n * p[k] * (1.0 - p[k]))
            if den == 0.0:
                if num != 0.0:
                    ok = False
                v = 0.0
            else:
                v = num / den
            if v > best:
                best = v
        stats[r] = best
    return stats, ok


@nb.njit(cache=True)
def bucket_means(means, center, scale, two_log_n, t, qs):
    """``bucket_levels`` of the q-levels of ``means``, without the intermediate array.

    Performs the same floating-point operations as ``core.q_levels``.
    """
    R, n = means.shape
    K = qs.size
    out = np.empty((R, n), dtype=np.int32)
    for r in range(R):
        for i in range(n):
            diff = means[r, i] - center
            if scale == 0.0:
                v = np.inf if diff >= 0.0 else -np.inf
            else:
                z = diff / scale
                v = t * z * z / two_log_n if z >= 0.0 else -np.inf
            lo = 0
            hi = K
            while lo < hi:
                mid = (lo + hi) >> 1
                if qs[mid] <= v:
                    lo = mid + 1
                else:
                    hi = mid
            out[r, i] = lo
    return out
