"""Spectral quantities from a fixed ensemble.

Everything here is a reweighting of one ensemble.  The estimator

    Lambda(P, lam) = mean_j exp(logw_j - P^2 sigma2_j / 2 + lam tau_j)

is, for a fixed ensemble, strictly increasing in ``lam``, strictly decreasing
in ``P^2`` and log-convex in ``(P^2, lam)``.  Root finding on it is therefore
deterministic given the ensemble, and the monotonicity and concavity of the
resulting energy curve hold exactly on the sample, not only in expectation.

Error bars come from a jackknife over 32 contiguous batches.  Leave-one-out
roots are recomputed by Newton iteration on the exact leave-one-out estimator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .ensemble import Ensemble, log_terms, weight_diagnostics
from .errors import (BracketError, DomainError, InconclusiveTailError, InvalidParameterError,
                     NumericalError, PhysicalRangeWarning)

DEFAULT_TOL = 1e-6
MAX_BISECT = 60
MAX_EXPAND = 60
JACKKNIFE_BATCHES = 32
EDGE_EPS = 1e-9

INTERIOR = "interior-root"
PLATEAU = "plateau"


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    stderr: float
    ess: float
    max_share: float
    log_value: float = float("nan")


def _log_lambda(ens: Ensemble, P: float, lam: float) -> float:
    return float(logsumexp(log_terms(ens, P, lam))) - math.log(len(ens))


def lambda_hat(ens: Ensemble, P: float, lam: float) -> LambdaEstimate:
    """Monte Carlo estimate of ``mu(exp(-P^2 sigma2 / 2 + lam T1))``."""
    N = len(ens)
    if N == 0:
        raise InvalidParameterError("empty ensemble")
    if P < 0:
        raise InvalidParameterError("P must be nonnegative")
    a = log_terms(ens, P, lam)
    top = float(a.max())
    if not math.isfinite(top):
        raise NumericalError(f"non-finite weights at lambda={lam}; try a smaller lambda")
    r = np.exp(a - top)
    s = float(r.sum())
    log_value = top + math.log(s / N)
    if log_value > 709.0:
        raise NumericalError(
            f"Lambda({P}, {lam}) overflows (log value {log_value:.1f}); try a smaller lambda")
    value = math.exp(log_value)
    sd = float(r.std(ddof=1)) * math.exp(top) if N > 1 else 0.0
    diag = weight_diagnostics(a)
    return LambdaEstimate(value=value, stderr=sd / math.sqrt(N), ess=diag.ess,
                          max_share=diag.max_share, log_value=log_value)


# -- root finding --------------------------------------------------------------

def _bisect(g, lo: float, hi: float, tol: float) -> tuple[float, float, float, int]:
    """Bisect the increasing ``g`` with ``g(lo) < 0 <= g(hi)``."""
    it = 0
    while it < MAX_BISECT:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g(mid)
        if gm < 0:
            lo = mid
        else:
            hi = mid
        it += 1
        # log-scale residual |log Lambda| <= tol implies |Lambda - 1| <~ tol
        if hi - lo <= tol and abs(gm) <= tol:
            break
    return 0.5 * (lo + hi), lo, hi, it


def _expand_down(g, hi: float, width: float) -> float:
    lo = hi - width
    for _ in range(MAX_EXPAND):
        if g(lo) < 0:
            return lo
        width *= 2.0
        lo = hi - width
    raise BracketError("could not bracket the root from below")


def _batch_bounds(N: int, nbatch: int) -> list[tuple[int, int]]:
    nb = min(nbatch, N)
    edges = np.linspace(0, N, nb + 1).round().astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(nb)]


def _jackknife_se(values: np.ndarray) -> float:
    B = values.size
    if B < 2:
        return 0.0
    return float(math.sqrt((B - 1) / B * np.sum((values - values.mean()) ** 2)))


def _loo_roots(ens: Ensemble, P: float, root: float, nbatch: int = JACKKNIFE_BATCHES,
               tol: float = 1e-10) -> np.ndarray:
    """Leave-one-batch-out roots of ``Lambda(P, .) = 1`` by Newton on ``log Lambda``."""
    N = len(ens)
    base = ens.logw - 0.5 * P * P * ens.sigma2
    tau = ens.tau
    bounds = _batch_bounds(N, nbatch)
    roots = np.empty(len(bounds))
    for b, (lo, hi) in enumerate(bounds):
        keep = N - (hi - lo)
        lam = root
        for _ in range(50):
            a = base + lam * tau
            top = max(a[:lo].max(initial=-np.inf), a[hi:].max(initial=-np.inf))
            r = np.exp(a - top)
            s0 = r[:lo].sum() + r[hi:].sum()
            s1 = (r[:lo] * tau[:lo]).sum() + (r[hi:] * tau[hi:]).sum()
            g = top + math.log(s0 / keep)
            step = g / (s1 / s0)
            lam -= step
            if abs(step) < tol:
                break
        roots[b] = lam
    return roots


@dataclass(frozen=True)
class GroundEnergy:
    energy: float
    stderr: float
    bracket: tuple[float, float]
    iterations: int
    diagnostics: LambdaEstimate

    def __iter__(self):
        # allows ``E0, diag = solve_E0(...)``
        return iter((self.energy, self))


def solve_E0(ens: Ensemble, tol: float = DEFAULT_TOL, *, jackknife: bool = True) -> GroundEnergy:
    """Root of ``Lambda(0, lam) = 1`` by bisection on the fixed ensemble."""
    if len(ens) == 0:
        raise InvalidParameterError("empty ensemble")
    alpha = ens.meta.alpha

    def g(lam):
        return _log_lambda(ens, 0.0, lam)

    hi = 0.0
    if g(hi) < 0:
        raise BracketError("Lambda(0, 0) < 1: cannot bracket E(0); use a larger ensemble")
    lo = _expand_down(g, hi, math.sqrt(2.0) * alpha + 1.0)
    e0, lo, hi, it = _bisect(g, lo, hi, tol)
    se = _jackknife_se(_loo_roots(ens, 0.0, e0)) if jackknife and len(ens) > 1 else 0.0
    return GroundEnergy(e0, se, (lo, hi), it, lambda_hat(ens, 0.0, e0))


@dataclass(frozen=True)
class EnergyCurvePoint:
    P: float
    energy: float
    kind: str
    bracket: tuple[float, float]
    diagnostics: LambdaEstimate
    stderr: float = 0.0

    @property
    def is_plateau(self) -> bool:
        return self.kind == PLATEAU


def _e0_value(E0) -> tuple[float, float]:
    if isinstance(E0, GroundEnergy):
        return E0.energy, E0.stderr
    return float(E0), 0.0


def lambda_upper(P: float, E0: float, e0_stderr: float = 0.0) -> float:
    """Upper end of the search interval: below ``P^2/2`` and the essential edge."""
    return min(0.5 * P * P, E0 + 1.0 - 2.0 * e0_stderr) - EDGE_EPS


def solve_EP(ens: Ensemble, P: float, E0, tol: float = DEFAULT_TOL, *,
             e0_stderr: float | None = None, jackknife: bool = True) -> EnergyCurvePoint:
    """Energy at momentum ``P``, or the plateau value ``E0 + 1``.

    ``E0`` is a float or the :class:`GroundEnergy` from the same ensemble.  A
    positive ``e0_stderr`` widens the plateau band by two standard errors of
    ``E0``; by default the band is not widened.
    """
    if P < 0:
        raise InvalidParameterError("P must be nonnegative")
    e0, se0 = _e0_value(E0)
    band = 0.0 if e0_stderr is None else e0_stderr
    if P == 0.0:
        return EnergyCurvePoint(0.0, e0, INTERIOR, (e0, e0), lambda_hat(ens, 0.0, e0), se0)

    def g(lam):
        return _log_lambda(ens, P, lam)

    hi = lambda_upper(P, e0, band)
    g_hi = g(hi)
    if not math.isfinite(g_hi):
        raise InconclusiveTailError(f"Lambda({P}, {hi}) is not finite; see i0_probe")
    if g_hi < 0:
        edge = e0 + 1.0
        return EnergyCurvePoint(P, edge, PLATEAU, (hi, hi), lambda_hat(ens, P, edge), se0)
    # Lambda(P, E0) <= Lambda(0, E0) = 1, so E0 is (up to tol) a lower bound
    lo = _expand_down(g, min(e0, hi), 1.0) if g(min(e0, hi)) >= 0 else min(e0, hi)
    root, lo, hi, _ = _bisect(g, lo, hi, tol)
    se = _jackknife_se(_loo_roots(ens, P, root)) if jackknife and len(ens) > 1 else 0.0
    return EnergyCurvePoint(P, root, INTERIOR, (lo, hi), lambda_hat(ens, P, root), se)


# -- derived scalars ----------------------------------------------------------

@dataclass(frozen=True)
class EffectiveMass:
    value: float
    stderr: float

    def __iter__(self):
        return iter((self.value, self.stderr))


def _mass_ratio(logw, tau, sigma2, e0) -> float:
    a = logw + e0 * tau
    r = np.exp(a - a.max())
    den = float((r * sigma2).sum())
    if not den > 0:
        raise NumericalError("degenerate denominator in the effective-mass ratio")
    return float((r * tau).sum()) / den


def effective_mass(ens: Ensemble, E0, *, jackknife: bool = True) -> EffectiveMass:
    """``mu_hat(T1) / mu_hat(sigma2)`` with weights ``w exp(E0 tau)``.

    The jackknife re-solves ``E0`` on every leave-one-batch-out sample.
    """
    e0, _ = _e0_value(E0)
    m = _mass_ratio(ens.logw, ens.tau, ens.sigma2, e0)
    if not jackknife or len(ens) < 2:
        return EffectiveMass(m, 0.0)
    e0_loo = _loo_roots(ens, 0.0, e0)
    vals = []
    for (lo, hi), eb in zip(_batch_bounds(len(ens), JACKKNIFE_BATCHES), e0_loo):
        sl = np.r_[0:lo, hi:len(ens)]
        vals.append(_mass_ratio(ens.logw[sl], ens.tau[sl], ens.sigma2[sl], eb))
    return EffectiveMass(m, _jackknife_se(np.array(vals)))


def resolvent(ens: Ensemble, P: float, lam: float, E0) -> float:
    """``<Omega, (H(P) - lam)^{-1} Omega>`` from the renewal identity."""
    e0, _ = _e0_value(E0)
    if lam >= 0.5 * P * P:
        raise DomainError(f"lambda={lam} must lie below P^2/2={0.5 * P * P}")
    if lam >= e0 + 1.0:
        raise DomainError(f"lambda={lam} must lie below E0 + 1 = {e0 + 1.0}")
    lv = _log_lambda(ens, P, lam)
    if lv >= 0:
        raise DomainError(f"Lambda({P}, {lam}) >= 1: lambda is not below E(P)")
    return 1.0 / ((0.5 * P * P - lam) * -math.expm1(lv))


def overlap(ens: Ensemble, P: float, EP, *, root_tol: float = 1e-4) -> float:
    """Squared vacuum overlap ``1 / ((P^2/2 - E) mu(T1 exp(-P^2 sigma2/2 + E T1)))``.

    ``EP`` is a float or an :class:`EnergyCurvePoint`.  Values outside (0, 1]
    are returned with a :class:`PhysicalRangeWarning`.
    """
    if isinstance(EP, EnergyCurvePoint):
        if EP.is_plateau:
            raise DomainError(f"P={EP.P} is a plateau point: no ground state to overlap with")
        EP = EP.energy
    EP = float(EP)
    if EP >= 0.5 * P * P:
        raise DomainError("E(P) must lie below P^2/2")
    lv = _log_lambda(ens, P, EP)
    if abs(lv) > root_tol:
        raise DomainError(f"E={EP} is not a root at P={P} (log Lambda = {lv:.3g})")
    a = log_terms(ens, P, EP)
    top = float(a.max())
    m1 = math.exp(top) * float((np.exp(a - top) * ens.tau).sum()) / len(ens)
    value = 1.0 / ((0.5 * P * P - EP) * m1)
    if not (0.0 < value <= 1.0):
        warnings.warn(f"overlap {value:.6g} outside (0, 1]; ensemble may be unphysical",
                      PhysicalRangeWarning, stacklevel=2)
    return value


# -- I0 probe -----------------------------------------------------------------

FINITE_LOOKING = "finite-looking"
HEAVY_TAILED = "heavy-tailed"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class I0Probe:
    P: float
    estimate: float
    log_estimate: float
    ess: float
    max_share: float
    tail_index: float
    verdict: str


def hill_tail_index(log_weights: np.ndarray, k: int | None = None) -> float:
    """Hill estimate of the Pareto tail index from the ``k`` largest log-weights."""
    a = np.sort(np.asarray(log_weights))[::-1]
    N = a.size
    if k is None:
        k = max(10, int(math.sqrt(N)))
    k = min(k, N - 1)
    if k < 1:
        return float("nan")
    spread = float(np.mean(a[:k] - a[k]))
    return math.inf if spread == 0.0 else 1.0 / spread


def i0_probe(ens: Ensemble, P: float, E0) -> I0Probe:
    """Diagnostics for ``mu_hat(exp(-P^2 sigma2/2 + T1))`` at the essential edge.

    Never raises on heavy tails: boundedness of the interior set cannot be
    decided from a finite sample, so only a verdict string is returned.
    """
    e0, _ = _e0_value(E0)
    a = log_terms(ens, P, e0 + 1.0)
    log_est = float(logsumexp(a)) - math.log(len(ens))
    est = math.exp(log_est) if log_est < 709 else math.inf
    diag = weight_diagnostics(a)
    xi = hill_tail_index(a)
    if xi > 2.0 and diag.max_share < 0.05:
        verdict = FINITE_LOOKING
    elif xi < 1.0 or diag.max_share > 0.5:
        verdict = HEAVY_TAILED
    else:
        verdict = INCONCLUSIVE
    return I0Probe(P, est, log_est, diag.ess, diag.max_share, xi, verdict)


# -- energy curve -------------------------------------------------------------

@dataclass
class CurveDiagnostics:
    monotone: bool
    concave: bool
    quasi_particle_bound: bool
    plateau_terminal: bool
    max_monotone_violation: float = 0.0
    max_concavity_violation: float = 0.0
    max_bound_violation: float = 0.0

    @property
    def ok(self) -> bool:
        return self.monotone and self.concave and self.quasi_particle_bound and self.plateau_terminal


@dataclass
class EnergyCurve:
    points: list[EnergyCurvePoint]
    E0: GroundEnergy
    m_eff: EffectiveMass
    diagnostics: CurveDiagnostics
    extra: dict = field(default_factory=dict)


def curve_diagnostics(points: Sequence[EnergyCurvePoint], E0: float, m_eff: float,
                      tol: float = DEFAULT_TOL, nsigma: float = 2.0) -> CurveDiagnostics:
    """Monotonicity, concavity of ``E(sqrt(.))`` and the quasi-particle bound.

    Each check allows a slack of a few bisection tolerances plus ``nsigma``
    standard errors of the points involved.
    """
    E = np.array([p.energy for p in points])
    se = np.array([p.stderr for p in points])
    interior = np.array([not p.is_plateau for p in points])
    lam = np.array([p.P ** 2 for p in points])

    mono_viol = 0.0
    strict = True
    for i in range(len(points) - 1):
        slack = 2 * tol + nsigma * math.hypot(se[i], se[i + 1])
        mono_viol = max(mono_viol, E[i] - E[i + 1] - slack)
        if interior[i] and interior[i + 1] and lam[i + 1] > lam[i]:
            strict = strict and E[i + 1] > E[i]
    monotone = mono_viol <= 0 and strict

    conc_viol = 0.0
    idx = np.flatnonzero(interior)
    for a, b, c in zip(idx, idx[1:], idx[2:]):
        if not (lam[a] < lam[b] < lam[c]):
            continue
        # chord through a and c must lie below the curve at b
        wgt = (lam[c] - lam[b]) / (lam[c] - lam[a])
        chord = wgt * E[a] + (1 - wgt) * E[c]
        slack = 4 * tol + nsigma * se[b]
        conc_viol = max(conc_viol, chord - E[b] - slack)
    concave = conc_viol <= 0

    bound_viol = 0.0
    for p, s in zip(points, se):
        excess = (p.energy - E0) - p.P ** 2 / (2 * m_eff)
        bound_viol = max(bound_viol, excess - (2 * tol + nsigma * s))
    bound = bound_viol <= 0

    kinds = [p.is_plateau for p in points]
    first = kinds.index(True) if True in kinds else len(kinds)
    plateau_terminal = all(kinds[first:])

    return CurveDiagnostics(monotone, concave, bound, plateau_terminal,
                            mono_viol, conc_viol, bound_viol)


def energy_curve(ens: Ensemble, P_grid: Sequence[float], tol: float = DEFAULT_TOL, *,
                 E0: GroundEnergy | None = None, jackknife: bool = True,
                 widen_plateau: bool = False) -> EnergyCurve:
    P_grid = [float(p) for p in P_grid]
    if any(p < 0 for p in P_grid) or any(b < a for a, b in zip(P_grid, P_grid[1:])):
        raise InvalidParameterError("P grid must be sorted and nonnegative")
    if E0 is None:
        E0 = solve_E0(ens, tol, jackknife=jackknife)
    band = E0.stderr if widen_plateau else None
    points = [solve_EP(ens, P, E0, tol, e0_stderr=band, jackknife=jackknife) for P in P_grid]
    m = effective_mass(ens, E0, jackknife=jackknife)
    diag = curve_diagnostics(points, E0.energy, m.value, tol)
    return EnergyCurve(points, E0, m, diag)


def log_lambda_grid(ens: Ensemble, p2_grid: Sequence[float], lam_grid: Sequence[float]) -> np.ndarray:
    """``log Lambda`` on a ``(P^2, lambda)`` grid; rows index ``P^2``."""
    out = np.empty((len(p2_grid), len(lam_grid)))
    for i, p2 in enumerate(p2_grid):
        base = ens.logw - 0.5 * p2 * ens.sigma2
        for j, lam in enumerate(lam_grid):
            out[i, j] = float(logsumexp(base + lam * ens.tau)) - math.log(len(ens))
    return out


def log_convexity_violation(log_grid: np.ndarray) -> float:
    """Largest ``2 l(mid) - l(a) - l(b)`` over all grid pairs whose midpoint is a node.

    Requires uniformly spaced axes.  Non-positive for a log-convex function.
    """
    n, m = log_grid.shape
    worst = -math.inf
    for di in range(-(n - 1), n):
        for dj in range(-(m - 1), m):
            if (di % 2) or (dj % 2) or (di == 0 and dj == 0):
                continue
            i0, i1 = max(0, -di), min(n, n - di)
            j0, j1 = max(0, -dj), min(m, m - dj)
            a = log_grid[i0:i1, j0:j1]
            b = log_grid[i0 + di:i1 + di, j0 + dj:j1 + dj]
            mid = log_grid[i0 + di // 2:i1 + di // 2, j0 + dj // 2:j1 + dj // 2]
            if a.size:
                worst = max(worst, float(np.max(2 * mid - a - b)))
    return worst


__all__ = [
    "LambdaEstimate", "lambda_hat", "GroundEnergy", "solve_E0", "EnergyCurvePoint", "solve_EP",
    "EffectiveMass", "effective_mass", "resolvent", "overlap", "I0Probe", "i0_probe",
    "hill_tail_index", "CurveDiagnostics", "EnergyCurve", "energy_curve", "curve_diagnostics",
    "log_lambda_grid", "log_convexity_violation", "lambda_upper", "INTERIOR", "PLATEAU",
]
