import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from polaron_renewal.errors import InvalidParameterError, ResourceLimitError
from polaron_renewal.excursion import (Excursion, Interval, alive_count, check_excursion,
                                       excursion_summary, sample_excursion)


def busy_cycle_by_union(rng, alpha):
    """Independent sampler: an excursion is the connected union of lifetime intervals.

    Arrivals form a Poisson process; the cycle closes at the first arrival that
    finds every earlier lifetime already finished.
    """
    t = rng.exponential(1 / alpha)
    horizon = t + rng.exponential(1.0)
    n = 1
    while True:
        t += rng.exponential(1 / alpha)
        if t > horizon:
            return n, horizon
        horizon = max(horizon, t + rng.exponential(1.0))
        n += 1


def test_interval_validation():
    assert Interval(0.0, 1.5).length == 1.5
    with pytest.raises(InvalidParameterError):
        Interval(1.0, 1.0)
    with pytest.raises(InvalidParameterError):
        Interval(-0.1, 1.0)


def test_excursion_sorted_and_tau_defaults_to_last_death():
    exc = Excursion.from_intervals([(2.0, 3.0), (1.0, 2.5)])
    assert list(exc.births) == [1.0, 2.0]
    assert exc.tau == 3.0
    check_excursion(exc)


def test_alive_count_right_continuous():
    exc = Excursion.from_intervals([(1.0, 3.0), (2.0, 4.0)])
    assert alive_count(exc, 1.0) == 1
    assert alive_count(exc, 0.999) == 0
    assert list(alive_count(exc, [2.0, 3.0, 4.0])) == [2, 1, 0]


def test_check_excursion_rejects_gap():
    gap = Excursion.from_intervals([(1.0, 2.0), (3.0, 4.0)])
    with pytest.raises(InvalidParameterError, match="returns to zero"):
        check_excursion(gap)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.05, 3.0))
def test_sampled_excursions_satisfy_invariants(seed, alpha):
    exc = sample_excursion(np.random.default_rng(seed), alpha)
    check_excursion(exc)
    assert exc.tau == exc.deaths.max()
    assert np.all(np.diff(exc.births) >= 0)


def test_deterministic_given_seed():
    a = sample_excursion(np.random.default_rng(3), 1.3)
    b = sample_excursion(np.random.default_rng(3), 1.3)
    assert a == b


def test_first_birth_is_exponential():
    alpha = 0.7
    rng = np.random.default_rng(1)
    first = [sample_excursion(rng, alpha).births[0] for _ in range(4000)]
    assert stats.kstest(first, "expon", args=(0, 1 / alpha)).pvalue > 1e-3


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_busy_cycle_means(alpha):
    # renewal-reward: E[tau] = exp(alpha)/alpha, E[n] = alpha E[tau] = exp(alpha)
    rng = np.random.default_rng(2)
    summary = excursion_summary([sample_excursion(rng, alpha) for _ in range(40_000)])
    assert abs(summary.mean_tau - math.exp(alpha) / alpha) < 4 * summary.stderr_tau
    assert abs(summary.mean_n - math.exp(alpha)) < 4 * summary.stderr_n

    oracle = np.array([busy_cycle_by_union(rng, alpha) for _ in range(40_000)])
    for col, ours, se in ((0, summary.mean_n, summary.stderr_n), (1, summary.mean_tau, summary.stderr_tau)):
        se_o = oracle[:, col].std(ddof=1) / math.sqrt(len(oracle))
        assert abs(oracle[:, col].mean() - ours) < 4 * math.hypot(se, se_o)


def test_births_during_founder_lifetime_are_poisson():
    # while the founder is alive the process cannot end, so births in a window
    # the founder survives are a homogeneous Poisson process
    alpha, T = 2.0, 0.5
    rng = np.random.default_rng(4)
    counts = []
    while len(counts) < 6000:
        exc = sample_excursion(rng, alpha)
        s1 = exc.births[0]
        founder_death = exc.deaths[0]
        if founder_death > s1 + T:
            counts.append(int(np.sum((exc.births > s1) & (exc.births <= s1 + T))))
    counts = np.array(counts)
    kmax = 4
    observed = [np.sum(counts == k) for k in range(kmax)] + [np.sum(counts >= kmax)]
    pmf = stats.poisson(alpha * T)
    expected = [pmf.pmf(k) for k in range(kmax)] + [pmf.sf(kmax - 1)]
    expected = np.array(expected) * len(counts)
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_cap_on_population():
    # a single draw may end before the cap (probability ~1/51), a few cannot all do
    rng = np.random.default_rng(0)
    with pytest.raises(ResourceLimitError) as info:
        for _ in range(20):
            sample_excursion(rng, 50.0, max_n=5)
    assert info.value.n == 5


def test_cap_on_duration():
    with pytest.raises(ResourceLimitError) as info:
        sample_excursion(np.random.default_rng(0), 5.0, max_tau=0.01)
    assert info.value.t > 0.01


@pytest.mark.parametrize("alpha", [0.0, -1.0, float("nan"), float("inf")])
def test_invalid_alpha(alpha):
    with pytest.raises(InvalidParameterError):
        sample_excursion(np.random.default_rng(0), alpha)


def test_summary_occupancy_adds_up():
    rng = np.random.default_rng(5)
    excs = [sample_excursion(rng, 1.0) for _ in range(200)]
    s = excursion_summary(excs)
    assert s.occupancy.sum() == pytest.approx(sum(e.tau for e in excs), rel=1e-12)
    with pytest.raises(InvalidParameterError):
        excursion_summary([])
