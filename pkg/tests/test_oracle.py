import math

import mpmath as mp
import numpy as np
import pytest

from permhc.core import Grid, GridKind, classic_hc, q_levels
from permhc.errors import DomainError, SignalOutOfRange
from permhc.oracle import (
    P_FLOOR,
    NullModel,
    approx_hc_test,
    approx_pq,
    beta_from_size,
    calibrate_oracle,
    oracle_hc_test,
    oracle_pq_gamma,
    oracle_pq_normal,
    oracle_statistic,
    rho_star,
    signal_theta,
    sparsity_size,
)
from permhc.permute import PermutationPlan, observed_means

mp.mp.dps = 40


def mp_normal_tail(z: float) -> float:
    return float(mp.erfc(mp.mpf(z) / mp.sqrt(2)) / 2)


def mp_gamma_tail(q, n, t):
    x = t * (1 + mp.sqrt(2 * mp.mpf(q) * mp.log(n) / t))
    return float(mp.gammainc(t, x, mp.inf, regularized=True))


def test_rho_star():
    assert rho_star(0.6) == pytest.approx(0.1, abs=1e-15)
    assert rho_star(0.75) == pytest.approx(0.25, abs=1e-15)
    assert (1 - math.sqrt(0.25)) ** 2 == pytest.approx(0.25)
    assert rho_star(0.999999) == pytest.approx(1.0, abs=3e-3)
    xs = np.linspace(0.501, 0.999, 200)
    assert np.all(np.diff([rho_star(b) for b in xs]) > 0)
    for b in (0.5, 1.0, 0.2):
        with pytest.raises(DomainError):
            rho_star(b)


def test_signal_theta_chain():
    beta = beta_from_size(1000, 12)
    assert beta == pytest.approx(0.6403, abs=1e-4)
    assert sparsity_size(1000, beta) == 12
    p = signal_theta(1.0, beta, 1000, 48, NullModel.normal())
    assert rho_star(beta) == pytest.approx(0.1403, abs=1e-4)
    # sqrt(2 * 0.14027 * log(1000) / 48)
    assert p.theta == pytest.approx(0.2009323, abs=1e-7)
    assert p.mean_shift == p.theta and p.s == 12
    assert signal_theta(0.0, beta, 1000, 48, NullModel.normal()).theta == 0.0


def test_signal_theta_out_of_range():
    beta = beta_from_size(1000, 12)
    with pytest.raises(SignalOutOfRange):
        signal_theta(1.25, beta, 1000, 3, NullModel.exponential(1.5))
    p = signal_theta(1.25, beta, 1000, 4, NullModel.exponential(1.5))
    assert p.theta < 1.5
    assert p.mean_shift == pytest.approx(1 / (1.5 - p.theta) - 1 / 1.5)


@pytest.mark.parametrize("q,n", [(0.0, 100), (1.0, 100), (0.3, 1000), (2.5, 1000), (9.0, 1000), (25.0, 50)])
def test_oracle_pq_normal_against_mpmath(q, n):
    ref = mp_normal_tail(math.sqrt(2 * q * math.log(n)))
    assert oracle_pq_normal(q, n) == pytest.approx(ref, rel=1e-12)


def test_oracle_pq_normal_examples():
    assert oracle_pq_normal(0.0, 10) == 0.5
    assert oracle_pq_normal(1.0, 100) == pytest.approx(1.2032597294e-3, rel=1e-10)
    vals = oracle_pq_normal(np.linspace(0, 5, 50), 100)
    assert np.all(np.diff(vals) < 0)


@pytest.mark.parametrize("q,n,t", [(0.0, 100, 1), (0.5, 100, 2), (1.0, 1000, 4), (3.0, 1000, 48), (0.2, 50, 10)])
def test_oracle_pq_gamma_against_mpmath(q, n, t):
    assert oracle_pq_gamma(q, n, t, 1.5) == pytest.approx(mp_gamma_tail(q, n, t), rel=1e-12)


def test_oracle_pq_gamma_examples():
    assert oracle_pq_gamma(0.0, 100, 1, 1.5) == pytest.approx(math.exp(-1), rel=1e-14)
    # rate cancels
    assert oracle_pq_gamma(0.7, 100, 5, 0.3) == pytest.approx(oracle_pq_gamma(0.7, 100, 5, 4.0), rel=1e-13)
    rng = np.random.default_rng(99)
    lam, t, n, q = 1.5, 2, 100, 0.5
    means = rng.gamma(t, 1 / (lam * t), size=10_000_000)
    thr = 1 / lam + (1 / lam) * math.sqrt(2 * q * math.log(n) / t)
    est = np.mean(means >= thr)
    p = oracle_pq_gamma(q, n, t, lam)
    assert abs(est - p) <= 3 * math.sqrt(p * (1 - p) / means.size)


def test_gamma_tail_approaches_normal_for_long_streams():
    for q in (0.1, 0.5, 1.0, 2.0):
        assert abs(oracle_pq_gamma(q, 1000, 10_000, 1.5) - oracle_pq_normal(q, 1000)) < 1e-3


def test_approx_pq_floor():
    p = approx_pq(np.array([0.0, 1e4]), 1000)
    assert p[0] == 0.5 and p[1] == P_FLOOR


def test_null_model():
    e = NullModel.exponential(2.0)
    assert (e.mu0, e.sigma0_sq, e.theta_star) == (0.5, 0.25, 2.0)
    n = NullModel.normal()
    assert (n.mu0, n.sigma0_sq, n.theta_star) == (0.0, 1.0, math.inf)
    with pytest.raises(DomainError):
        NullModel.exponential(0.0)


def test_oracle_statistic_matches_classic_hc_on_candidate_grid():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n, t = int(rng.integers(5, 51)), int(rng.integers(1, 10))
        x = rng.normal(size=(n, t))
        m = observed_means(x)
        # candidate points are the q-levels of the positive stream means
        cand = q_levels(m[m > 0], 0.0, 1.0, n, t)
        if cand.size == 0:
            continue
        grid = Grid(np.concatenate([[0.0], np.unique(cand)]), GridKind.DATA)
        pv = [mp_normal_tail(math.sqrt(t) * v) for v in m]
        assert oracle_statistic(x, NullModel.normal(), grid=grid) == pytest.approx(classic_hc(pv), rel=1e-10)


def test_oracle_statistic_zero_on_centred_counts():
    # at q = 0 one of two streams clears the null mean, exactly n * p_0
    x = np.array([[1.0], [-1.0]])
    grid = Grid(np.zeros(1), GridKind.DATA)
    assert oracle_statistic(x, NullModel.normal(), grid=grid) == 0.0


def test_oracle_calibration_is_deterministic_and_level_controlled():
    model = NullModel.normal()
    cal = calibrate_oracle(model, 50, 4, calib_samples=2000, seed=3)
    again = calibrate_oracle(model, 50, 4, calib_samples=2000, seed=3)
    assert cal.null_stats.tobytes() == again.null_stats.tobytes()
    rng = np.random.default_rng(5)
    rej = 0
    reps = 2000
    for _ in range(reps):
        r = oracle_hc_test(rng.normal(size=(50, 4)), model, calibration=cal)
        rej += r.p_value <= 0.05
    se = math.sqrt(0.05 * 0.95 / reps)
    assert 0.05 - 3 * se <= rej / reps <= 0.05 + 3 * se + 1 / 2001


def test_oracle_exponential_detects_signal():
    model = NullModel.exponential(1.5)
    rng = np.random.default_rng(8)
    x = rng.exponential(1 / 1.5, size=(200, 10))
    x[:5] = rng.exponential(1 / 0.3, size=(5, 10))
    r = oracle_hc_test(x, model, calib_samples=500, seed=1)
    assert r.p_value == 1 / 501
    with pytest.raises(DomainError):
        oracle_hc_test(x[:100], model, calibration=calibrate_oracle(model, 200, 10, 20))


def test_approx_hc_constant_and_signal():
    r = approx_hc_test(np.full((5, 3), 1.0), PermutationPlan(50, 1))
    assert r.p_value == 1.0
    rng = np.random.default_rng(4)
    x = rng.normal(size=(100, 10))
    x[:4] += 2.0
    assert approx_hc_test(x, PermutationPlan(200, 2)).p_value == 1 / 201
