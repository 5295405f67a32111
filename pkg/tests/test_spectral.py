import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polaron_renewal.ensemble import Ensemble
from polaron_renewal.errors import (BracketError, DomainError, InvalidParameterError,
                                    PhysicalRangeWarning)
from polaron_renewal.fk_oracle import perturbative_E0
from polaron_renewal.spectral import (INTERIOR, PLATEAU, EnergyCurvePoint, LambdaEstimate,
                                      curve_diagnostics, effective_mass, energy_curve,
                                      hill_tail_index, i0_probe, lambda_hat, log_convexity_violation,
                                      log_lambda_grid, overlap, resolvent, solve_E0, solve_EP)

# one row: Lambda(P, lam) = exp(0.5 - P^2/4 + lam), so E0 = -0.5 and E(P) = P^2/4 - 0.5
ONE = Ensemble.from_rows(1.0, [(1.0, 0.5, 0.5, 1)])


def test_lambda_hat_hand_value():
    est = lambda_hat(ONE, 1.0, -0.2)
    assert est.value == pytest.approx(math.exp(0.5 - 0.25 - 0.2), rel=1e-14)
    two = Ensemble.from_rows(1.0, [(1.0, 0.5, 0.0, 1), (2.0, 1.0, 0.0, 1)])
    assert lambda_hat(two, 0.0, 0.0).value == pytest.approx(1.0)
    with pytest.raises(InvalidParameterError):
        lambda_hat(ONE, -1.0, 0.0)


def test_root_finding_on_synthetic_ensemble():
    g = solve_E0(ONE, 1e-10)
    assert g.energy == pytest.approx(-0.5, abs=1e-9)
    e0, diag = g
    assert diag is g
    pt = solve_EP(ONE, 1.0, g, 1e-10)
    assert pt.kind == INTERIOR
    assert pt.energy == pytest.approx(0.25 - 0.5, abs=1e-9)
    assert solve_EP(ONE, 0.0, g).energy == g.energy
    # root at or beyond the edge E0 + 1 = 0.5 becomes a plateau point
    for P in (2.0, 3.0):
        far = solve_EP(ONE, P, g, 1e-10)
        assert far.kind == PLATEAU and far.energy == pytest.approx(0.5, abs=1e-9)


def test_bracket_failure():
    sub = Ensemble.from_rows(1.0, [(1.0, 0.5, -1.0, 1)])
    with pytest.raises(BracketError):
        solve_E0(sub)


def test_effective_mass_single_row():
    m = effective_mass(ONE, solve_E0(ONE), jackknife=False)
    assert m.value == pytest.approx(2.0)


def test_resolvent_formula_and_domain():
    lam = -1.0
    L = lambda_hat(ONE, 1.0, lam).value
    assert resolvent(ONE, 1.0, lam, -0.5) == pytest.approx(1 / ((0.5 - lam) * (1 - L)))
    with pytest.raises(DomainError):
        resolvent(ONE, 1.0, 0.5, -0.5)       # lam >= P^2/2
    with pytest.raises(DomainError):
        resolvent(ONE, 3.0, 0.6, -0.5)       # lam >= E0 + 1
    with pytest.raises(DomainError):
        resolvent(ONE, 1.0, -0.1, -0.5)      # Lambda >= 1


def test_overlap_domain():
    g = solve_E0(ONE, 1e-12)
    pt = solve_EP(ONE, 1.0, g, 1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PhysicalRangeWarning)
        val = overlap(ONE, 1.0, pt)
    assert val == pytest.approx(1 / ((0.5 - pt.energy) * 1.0))
    with pytest.raises(DomainError):
        overlap(ONE, 3.0, solve_EP(ONE, 3.0, g))


def test_overlap_out_of_range_warns():
    g = solve_E0(ONE, 1e-12)
    pt = solve_EP(ONE, 0.1, g, 1e-12)
    with pytest.warns(PhysicalRangeWarning):
        overlap(ONE, 0.1, pt)


def test_pathwise_monotone_and_log_convex(ens_alpha1):
    p2 = np.linspace(0, 2.25, 8)
    lam = np.linspace(-3, -0.5, 8)
    grid = log_lambda_grid(ens_alpha1, p2, lam)
    assert np.all(np.diff(grid, axis=1) > 0)
    assert np.all(np.diff(grid, axis=0) < 0)
    assert log_convexity_violation(grid) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 10), st.floats(0.01, 1.0), st.floats(-5, 5)),
                min_size=2, max_size=30),
       st.floats(-3, 0), st.floats(0.05, 1.0))
def test_log_convexity_on_any_ensemble(rows, lam0, step):
    ens = Ensemble.from_rows(1.0, [(t, f * t, w, 1) for t, f, w in rows])
    grid = log_lambda_grid(ens, np.arange(5) * step, lam0 + np.arange(5) * step)
    assert log_convexity_violation(grid) <= 1e-12


def test_log_convexity_detector_flags_concave_grid():
    x = np.linspace(0, 1, 5)
    grid = -np.add.outer(x ** 2, x ** 2)
    assert log_convexity_violation(grid) > 0


def test_energy_curve_alpha1(ens_alpha1):
    curve = energy_curve(ens_alpha1, [0.0, 0.5, 1.0, 1.5])
    assert curve.E0.energy < 0
    assert curve.points[0].energy == curve.E0.energy
    assert curve.diagnostics.ok
    assert all(p.stderr > 0 for p in curve.points)
    assert curve.m_eff.value > 1
    with pytest.raises(InvalidParameterError):
        energy_curve(ens_alpha1, [1.0, 0.5])


def test_weak_coupling_energy(ens_alpha01):
    g = solve_E0(ens_alpha01)
    assert abs(g.energy - perturbative_E0(0.1)) < 0.1 * abs(perturbative_E0(0.1))


def _pt(P, E, kind=INTERIOR, se=0.0):
    return EnergyCurvePoint(P, E, kind, (E, E), LambdaEstimate(1.0, 0.0, 1.0, 1.0), se)


def test_curve_diagnostics_detects_violations():
    good = [_pt(0.0, -1.0), _pt(0.5, -0.9), _pt(1.0, -0.62)]
    d = curve_diagnostics(good, -1.0, 1.2)
    assert d.monotone and d.concave and d.quasi_particle_bound and d.plateau_terminal
    bad = [_pt(0.0, -1.0), _pt(0.5, -1.1), _pt(1.0, -0.5)]
    assert not curve_diagnostics(bad, -1.0, 1.2).monotone
    convex = [_pt(0.0, -1.0), _pt(0.5, -0.99), _pt(1.0, -0.5)]
    assert not curve_diagnostics(convex, -1.0, 3.0).concave
    steep = [_pt(0.0, -1.0), _pt(1.0, -0.2)]
    assert not curve_diagnostics(steep, -1.0, 1.0).quasi_particle_bound
    gap = [_pt(0.0, -1.0), _pt(1.0, 0.0, PLATEAU), _pt(1.5, -0.2)]
    assert not curve_diagnostics(gap, -1.0, 1.0).plateau_terminal


def test_hill_estimator_on_pareto():
    rng = np.random.default_rng(0)
    x = rng.pareto(1.5, 200_000) + 1.0
    assert hill_tail_index(np.log(x)) == pytest.approx(1.5, rel=0.1)


def test_i0_probe_reports(ens_alpha1):
    g = solve_E0(ens_alpha1, jackknife=False)
    pr = i0_probe(ens_alpha1, 0.5, g)
    assert pr.verdict in ("finite-looking", "heavy-tailed", "inconclusive")
    assert pr.ess >= 1 and 0 < pr.max_share <= 1
