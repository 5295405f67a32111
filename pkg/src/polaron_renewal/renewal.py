"""Lattice solution of the renewal equation ``f = nu * f + z``.

``nu`` is the image of the tilted renewal measure under ``T1`` binned on a
grid of step ``h``: an atom at ``tau`` is attributed to the right edge of its
bin ``((k-1)h, kh]``.  That convention keeps bin 0 empty and hence ``f[0] = 1``
exact, at the price of an ``O(h)`` underestimate of ``f``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .ensemble import Ensemble, EnsembleMeta
from .spectral import JACKKNIFE_BATCHES, _batch_bounds
from .errors import DomainError, InvalidParameterError, NoPlateauError

log = logging.getLogger(__name__)

DEFAULT_H = 0.01
DEFAULT_T_MAX = 10.0
TAIL_WARN_FRACTION = 1e-3
PLATEAU_DRIFT = 0.05


@dataclass(frozen=True, eq=False)
class EmpiricalNu:
    h: float
    weights: np.ndarray
    P: float
    tail_mass: float
    meta: EnsembleMeta | None = None

    @property
    def T_max(self) -> float:
        return self.h * (self.weights.size - 1)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class RenewalSolution:
    h: float
    values: np.ndarray
    P: float
    remainder_bound: float | None = None

    @property
    def T_max(self) -> float:
        return self.h * (self.values.size - 1)

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.values.size)

    def at(self, T: float) -> float:
        """Value at a grid time (``T`` must be a multiple of ``h`` up to rounding)."""
        k = int(round(T / self.h))
        if not math.isclose(k * self.h, T, rel_tol=1e-9, abs_tol=1e-12) or not 0 <= k < self.values.size:
            raise InvalidParameterError(f"T={T} is not a grid point of this solution")
        return float(self.values[k])


def _grid_size(h: float, T_max: float) -> int:
    if not (h > 0) or not (T_max >= h):
        raise InvalidParameterError("need h > 0 and T_max >= h")
    return int(round(T_max / h))


def empirical_nu(ens: Ensemble, P: float, h: float = DEFAULT_H,
                 T_max: float = DEFAULT_T_MAX) -> EmpiricalNu:
    """Bin ``exp(logw - P^2 sigma2 / 2)`` by ``tau`` into ``((k-1)h, kh]``."""
    K = _grid_size(h, T_max)
    N = len(ens)
    k = np.ceil(ens.tau / h).astype(np.int64)
    inside = k <= K
    a = ens.logw - 0.5 * P * P * ens.sigma2
    weights = np.bincount(k[inside], weights=np.exp(a[inside]), minlength=K + 1)[:K + 1] / N
    tail = math.exp(float(logsumexp(a[~inside])) - math.log(N)) if (~inside).any() else 0.0
    total = tail + weights.sum()
    if total > 0 and tail > TAIL_WARN_FRACTION * total:
        warnings.warn(f"{tail / total:.2%} of the nu mass lies beyond T_max={T_max}",
                      RuntimeWarning, stacklevel=2)
    weights.setflags(write=False)
    return EmpiricalNu(h=float(h), weights=weights, P=float(P), tail_mass=tail, meta=ens.meta)


def z_values(P: float, h: float, K: int) -> np.ndarray:
    return np.exp(-0.5 * P * P * h * np.arange(K + 1))


@numba.njit(cache=True)
def _forward(nu, z):
    K = z.size - 1
    f = np.empty(K + 1)
    for k in range(K + 1):
        acc = z[k]
        for m in range(1, k + 1):
            acc += nu[m] * f[k - m]
        f[k] = acc
    return f


def solve_renewal(nu: EmpiricalNu, P: float | None = None) -> RenewalSolution:
    """Forward recursion ``f[k] = z(kh) + sum_{m=1..k} nu[m] f[k-m]``."""
    P = nu.P if P is None else float(P)
    K = nu.weights.size - 1
    f = _forward(np.ascontiguousarray(nu.weights), z_values(P, nu.h, K))
    f.setflags(write=False)
    return RenewalSolution(nu.h, f, P)


def renewal_stderr(ens: Ensemble, P: float, h: float = DEFAULT_H, T_max: float = DEFAULT_T_MAX,
                   nbatch: int = JACKKNIFE_BATCHES) -> np.ndarray:
    """Delete-one-batch jackknife standard error of ``f[k]`` on the grid."""
    K = _grid_size(h, T_max)
    N = len(ens)
    k = np.ceil(ens.tau / h).astype(np.int64)
    w = np.where(k <= K, np.exp(np.minimum(ens.logw - 0.5 * P * P * ens.sigma2, 700.0)), 0.0)
    k = np.minimum(k, K + 1)
    bounds = _batch_bounds(N, nbatch)
    per_batch = np.stack([np.bincount(k[lo:hi], weights=w[lo:hi], minlength=K + 2)[:K + 1]
                          for lo, hi in bounds])
    total = per_batch.sum(axis=0)
    z = z_values(P, h, K)
    sols = np.stack([_forward((total - per_batch[b]) / (N - (hi - lo)), z)
                     for b, (lo, hi) in enumerate(bounds)])
    B = len(bounds)
    if B < 2:
        return np.zeros(K + 1)
    return np.sqrt((B - 1) / B * ((sols - sols.mean(axis=0)) ** 2).sum(axis=0))


def convolution_residual(nu: EmpiricalNu, sol: RenewalSolution) -> float:
    """``max_k |f[k] - z(kh) - (nu * f)[k]|``."""
    K = sol.values.size - 1
    conv = np.convolve(nu.weights, sol.values)[:K + 1]
    return float(np.max(np.abs(sol.values - z_values(sol.P, sol.h, K) - conv)))


def series_solution(nu: EmpiricalNu, P: float | None, n_max: int) -> RenewalSolution:
    """Neumann partial sum ``sum_{n <= n_max} nu^{*n} * z`` on the grid.

    The remainder ``nu^{*(n_max+1)} * f`` is bounded by
    ``mass(nu)^(n_max+1) * max f``.
    """
    if n_max < 0:
        raise InvalidParameterError("n_max must be >= 0")
    P = nu.P if P is None else float(P)
    K = nu.weights.size - 1
    term = z_values(P, nu.h, K)
    total = term.copy()
    for _ in range(n_max):
        term = np.convolve(nu.weights, term)[:K + 1]
        total += term
    f_max = float(_forward(np.ascontiguousarray(nu.weights), z_values(P, nu.h, K)).max())
    bound = nu.mass ** (n_max + 1) * f_max
    total.setflags(write=False)
    return RenewalSolution(nu.h, total, P, remainder_bound=bound)


def discrete_energy(nu: EmpiricalNu) -> float:
    """Root ``lam`` of ``sum_k nu[k] exp(lam k h) = 1`` (the lattice growth rate is ``-lam``)."""
    k = np.flatnonzero(nu.weights > 0)
    if k.size == 0:
        raise DomainError("empty nu has no renewal root")
    logw = np.log(nu.weights[k])
    t = k * nu.h

    def g(lam):
        return float(logsumexp(logw + lam * t))

    lo, hi = -1.0, 1.0
    while g(lo) > 0:
        lo *= 2
    while g(hi) < 0:
        hi *= 2
    return brentq(g, lo, hi, xtol=1e-14, rtol=1e-14)


@dataclass(frozen=True)
class PlateauFit:
    value: float
    slope: float
    window: tuple[float, float]

    @property
    def drift(self) -> float:
        return abs(self.slope) * self.window[1]


def plateau_fit(sol: RenewalSolution, EP: float) -> PlateauFit:
    K = sol.values.size - 1
    k0 = (3 * K) // 4
    t = sol.times[k0:]
    g = np.exp(EP * t) * sol.values[k0:]
    if t.size > 1:
        slope = float(np.polyfit(t, g, 1)[0])
    else:
        slope = 0.0
    return PlateauFit(float(g.mean()), slope, (float(t[0]), float(t[-1])))


def plateau(sol: RenewalSolution, EP: float) -> PlateauFit:
    """Large-``T`` limit of ``exp(T EP) f(T)``, read off the last quartile of the grid.

    Raises :class:`NoPlateauError` when the linear drift over the horizon
    exceeds 5% of the mean.
    """
    fit = plateau_fit(sol, EP)
    if not fit.drift < PLATEAU_DRIFT * abs(fit.value):
        raise NoPlateauError(
            f"no plateau: drift {fit.drift:.3g} vs mean {fit.value:.3g} over "
            f"[{fit.window[0]:g}, {fit.window[1]:g}]; extend T_max")
    return fit


def laplace(sol: RenewalSolution, lam: float, EP: float,
            plateau_value: float | None = None) -> float:
    """``int_0^inf exp(lam T) f(T) dT`` with a tail correction beyond ``T_max``.

    The grid part is the trapezoidal rule with the Euler-Maclaurin endpoint
    correction; the tail assumes ``f(T) = C exp(-EP T)`` with ``C`` the plateau.
    """
    if lam >= EP:
        raise DomainError(f"lambda={lam} must lie below EP={EP} for the transform to converge")
    h = sol.h
    t = sol.times
    g = np.exp(lam * t) * sol.values
    body = h * (g.sum() - 0.5 * (g[0] + g[-1]))
    if g.size >= 3:
        d0 = (-3 * g[0] + 4 * g[1] - g[2]) / (2 * h)
        d1 = (3 * g[-1] - 4 * g[-2] + g[-3]) / (2 * h)
        body -= h * h / 12.0 * (d1 - d0)
    if plateau_value is None:
        plateau_value = plateau(sol, EP).value
    tail = plateau_value * math.exp((lam - EP) * sol.T_max) / (EP - lam)
    return float(body + tail)


__all__ = [
    "EmpiricalNu", "RenewalSolution", "empirical_nu", "solve_renewal", "series_solution",
    "convolution_residual", "renewal_stderr", "discrete_energy", "PlateauFit", "plateau", "plateau_fit", "laplace",
    "z_values",
]
