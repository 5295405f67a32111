import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polaron_renewal.ensemble import Ensemble
from polaron_renewal.errors import DomainError, InvalidParameterError, NoPlateauError
from polaron_renewal.renewal import (EmpiricalNu, RenewalSolution, convolution_residual,
                                     discrete_energy, empirical_nu, laplace, plateau,
                                     renewal_stderr, series_solution, solve_renewal, z_values)
from polaron_renewal.spectral import lambda_hat, solve_E0, solve_EP

ROW = Ensemble.from_rows(1.0, [(1.0, 0.5, 0.0, 1)])


def nu_from(weights, h, P=0.0):
    return EmpiricalNu(h, np.asarray(weights, dtype=float), P, 0.0)


def quiet_nu(*a, **k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return empirical_nu(*a, **k)


def test_empirical_nu_examples():
    nu = empirical_nu(ROW, 0.0, 0.5, 2.0)
    np.testing.assert_array_equal(nu.weights, [0, 0, 1, 0, 0])
    nu = empirical_nu(ROW, math.sqrt(2), 0.5, 2.0)
    assert nu.weights[2] == pytest.approx(math.exp(-0.5), rel=1e-15)
    with pytest.raises(InvalidParameterError):
        empirical_nu(ROW, 0.0, 0.5, 0.1)


def test_mass_partition(ens_alpha1):
    for P in (0.0, 0.8):
        nu = quiet_nu(ens_alpha1, P, 0.01, 3.0)
        assert nu.weights[0] == 0
        total = nu.mass + nu.tail_mass
        assert total == pytest.approx(lambda_hat(ens_alpha1, P, 0.0).value, rel=1e-12)


def test_tail_mass_warning(ens_alpha1):
    with pytest.warns(RuntimeWarning, match="beyond T_max"):
        empirical_nu(ens_alpha1, 0.0, 0.01, 1.0)


def test_free_propagator_exact():
    for P in (0.0, 0.7, 2.0):
        f = solve_renewal(nu_from(np.zeros(301), 0.01), P)
        np.testing.assert_allclose(f.values, np.exp(-0.5 * P * P * 0.01 * np.arange(301)),
                                   rtol=0, atol=1e-15)


def test_geometric_renewal_toy():
    nu = nu_from([0, 0, 0.5, 0, 0, 0], 0.5)
    assert solve_renewal(nu).at(2.5) == pytest.approx(1.75, abs=1e-15)
    assert series_solution(nu, 0.0, 2).at(2.5) == pytest.approx(1.75, abs=1e-15)
    np.testing.assert_array_equal(series_solution(nu, 0.3, 0).values, z_values(0.3, 0.5, 5))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 0.05), min_size=5, max_size=200), st.floats(0.0, 2.0))
def test_series_matches_recursion(w, P):
    w = [0.0] + w
    nu = nu_from(w, 0.05)
    exact = solve_renewal(nu, P)
    s = series_solution(nu, P, 60)
    assert np.max(np.abs(exact.values - s.values)) <= s.remainder_bound + 1e-12
    # nu mass < 1 here, so 60 terms leave a tiny remainder
    np.testing.assert_allclose(s.values, exact.values, rtol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=100), st.floats(0.0, 2.0))
def test_recursion_properties(w, P):
    nu = nu_from([0.0] + w, 0.02)
    sol = solve_renewal(nu, P)
    assert sol.values[0] == 1.0
    assert np.all(sol.values > 0)
    assert np.all(sol.values >= z_values(P, 0.02, len(w)) - 1e-15)
    assert convolution_residual(nu, sol) <= 1e-12 * max(1.0, float(sol.values.max()))


def test_lattice_plateau_closed_form():
    # nu = c delta_h: f[k] = (c^(k+1) - 1)/(c - 1), growth exp(-lam k h) with c exp(lam h) = 1
    c, h = 1.5, 0.1
    w = np.zeros(101)
    w[1] = c
    nu = nu_from(w, h)
    lam = discrete_energy(nu)
    assert lam == pytest.approx(-math.log(c) / h, rel=1e-12)
    fit = plateau(solve_renewal(nu), lam)
    assert fit.value == pytest.approx(c / (c - 1), abs=1e-6)


def test_plateau_of_pure_exponential():
    h, C, E = 0.01, 0.7, -0.3
    t = h * np.arange(1001)
    sol = RenewalSolution(h, C * np.exp(-E * t), 0.0)
    fit = plateau(sol, E)
    assert fit.value == pytest.approx(C, rel=1e-12)
    assert fit.drift == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(NoPlateauError):
        plateau(sol, E + 0.1)


def test_laplace_of_exponential():
    a, h = 1.3, 0.01
    t = h * np.arange(1001)
    sol = RenewalSolution(h, np.exp(-a * t), 0.0)
    for lam in (-2.0, 0.0, 1.0):
        assert laplace(sol, lam, a) == pytest.approx(1 / (a - lam), abs=1e-6)
    with pytest.raises(DomainError):
        laplace(sol, a, a)


def test_laplace_decays_like_inverse_lambda():
    a, h = 1.0, 0.001
    t = h * np.arange(5001)
    sol = RenewalSolution(h, np.exp(-a * t), 0.0)
    scaled = [-lam * laplace(sol, lam, a) for lam in (-5.0, -10.0, -20.0, -40.0)]
    assert all(x < y for x, y in zip(scaled, scaled[1:]))
    assert scaled[-1] == pytest.approx(1.0, abs=0.03)


def test_grid_refinement_is_first_order(ens_alpha1):
    vals = []
    for h in (0.02, 0.01, 0.005):
        vals.append(solve_renewal(quiet_nu(ens_alpha1, 0.5, h, 2.0)).at(2.0))
    d1, d2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert 1.4 < d1 / d2 < 2.8
    assert vals[0] < vals[1] < vals[2]  # right-edge binning underestimates f


def test_subcritical_bounded(ens_alpha1):
    nu = quiet_nu(ens_alpha1, 4.0, 0.01, 10.0)
    assert nu.mass < 1
    f = solve_renewal(nu).values
    assert f.max() <= 1 / (1 - nu.mass)


def test_supercritical_growth_rate(ens_alpha1):
    g = solve_E0(ens_alpha1, jackknife=False)
    for P in (0.0, 0.5):
        EP = solve_EP(ens_alpha1, P, g, jackknife=False).energy
        f = solve_renewal(quiet_nu(ens_alpha1, P, 0.01, 10.0)).values
        K = f.size - 1
        rate = (math.log(f[K]) - math.log(f[K // 2])) / (0.01 * (K - K // 2))
        assert rate == pytest.approx(-EP, rel=0.02)


def test_jackknife_stderr(ens_alpha1):
    se = renewal_stderr(ens_alpha1, 0.0, 0.01, 2.0)
    assert se[0] == 0.0
    assert np.all(se[1:] >= 0) and se[-1] > se[100] > 0
