"""Finite-dimensional Gaussian computations attached to an excursion.

For intervals ``(s_i, t_i)`` and weights ``u_i >= 0`` we need

* the overlap matrix ``C_ij = |[s_i, t_i] ∩ [s_j, t_j]|`` (covariance of the
  Brownian increments over the intervals),
* the residual variance ``sigma2_t`` of ``B_t`` after projecting onto the noisy
  observations ``u_i B_{s_i,t_i} + Z_i`` with standard normal ``Z_i``,
* the normalisation ``phi = E[exp(-sum u_i^2 |X_{s_i,t_i}|^2 / 2)]`` for a
  three-dimensional Brownian motion ``X``.

The projection residual is ``t - b^T (I + D C D)^{-1} b`` with ``D = diag(u)``
and ``b_i = u_i |[s_i, t_i] ∩ [0, t]|``.  We evaluate it in the scaled form
``t - l^T (C + D^{-2})^{-1} l`` restricted to ``u_i > 0``, which is the same
number but stays well conditioned when some ``u_i`` are huge (short intervals
with tiny displacements).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import integrate, linalg

from .errors import InvalidParameterError, NumericalError
from .excursion import Excursion, Interval

NEGATIVE_SIGMA2_TOL = 1e-10


def _endpoints(intervals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(intervals, Excursion):
        return intervals.births, intervals.deaths
    pairs = [(iv.birth, iv.death) if isinstance(iv, Interval) else tuple(iv) for iv in intervals]
    s = np.array([p[0] for p in pairs], dtype=np.float64)
    t = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(s < 0) or np.any(s >= t):
        raise InvalidParameterError("intervals need 0 <= birth < death")
    return s, t


def overlap_matrix(intervals) -> np.ndarray:
    """Matrix of pairwise overlap lengths, exactly symmetric."""
    s, t = _endpoints(intervals)
    return np.maximum(0.0, np.minimum.outer(t, t) - np.maximum.outer(s, s))


def _clipped_lengths(s: np.ndarray, t_end: np.ndarray, t: float) -> np.ndarray:
    return np.maximum(0.0, np.minimum(t_end, t) - s)


def _check_u(u, n: int) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (n,):
        raise InvalidParameterError(f"u must have length {n}, got shape {u.shape}")
    if np.any(~(u >= 0)):
        raise InvalidParameterError("u must be nonnegative")
    return u


def sigma_squared_t(intervals, u, t: float) -> float:
    """Residual variance of ``B_t`` given the observations ``u_i B_{s_i,t_i} + Z_i``."""
    s, e = _endpoints(intervals)
    u = _check_u(u, s.size)
    if t < 0:
        raise InvalidParameterError("t must be nonnegative")
    # u^2 underflowing means the observation carries no information about B
    active = u * u > 0
    if not active.any():
        return float(t)
    s, e, u = s[active], e[active], u[active]
    ell = _clipped_lengths(s, e, t)
    k = overlap_matrix(list(zip(s, e))) + np.diag(1.0 / u**2)
    try:
        factor = linalg.cho_factor(k, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError("Cholesky factorisation failed for the observation Gram matrix") from exc
    explained = float(ell @ linalg.cho_solve(factor, ell, check_finite=False))
    value = float(t) - explained
    if value < -NEGATIVE_SIGMA2_TOL:
        raise NumericalError(f"negative residual variance {value:.3e}")
    return max(value, 0.0)


def phi(intervals, u) -> float:
    """``det(I + D C D)^{-3/2}`` computed from a Cholesky log-determinant."""
    return math.exp(log_phi(intervals, u))


def log_phi(intervals, u) -> float:
    s, e = _endpoints(intervals)
    u = _check_u(u, s.size)
    if s.size == 0:
        return 0.0
    g = np.eye(s.size) + u[:, None] * overlap_matrix(list(zip(s, e))) * u[None, :]
    try:
        chol = linalg.cholesky(g, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError("Cholesky factorisation of I + D C D failed") from exc
    return -3.0 * float(np.log(np.diag(chol)).sum())


@dataclass(frozen=True, eq=False)
class DressedExcursion:
    excursion: Excursion
    u: np.ndarray
    displacement_norms: np.ndarray

    def __post_init__(self):
        n = self.excursion.n
        u = np.asarray(self.u, dtype=np.float64)
        r = np.asarray(self.displacement_norms, dtype=np.float64)
        if u.shape != (n,) or r.shape != (n,):
            raise InvalidParameterError("u and displacement_norms must match the excursion size")
        if np.any(~(u >= 0)) or np.any(~(r > 0)):
            raise InvalidParameterError("need u >= 0 and displacement norms > 0")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "displacement_norms", r)


def sigma_squared(dressed: DressedExcursion) -> float:
    exc = dressed.excursion
    return sigma_squared_t(exc, dressed.u, exc.tau)


# -- sampling -----------------------------------------------------------------

@numba.njit(cache=True)
def _displacement_kernel(rng, births, deaths, out):
    """Brownian increments over the intervals, built from the common refinement.

    One independent ``N(0, len)`` 3-vector is drawn per cell of the sorted,
    de-duplicated endpoint grid; zero-length cells never occur after exact
    de-duplication.
    """
    n = births.size
    pts = np.unique(np.concatenate((births, deaths)))
    m = pts.size
    path = np.zeros((m, 3))
    for c in range(1, m):
        sd = math.sqrt(pts[c] - pts[c - 1])
        for d in range(3):
            path[c, d] = path[c - 1, d] + sd * rng.standard_normal()
    lo = np.searchsorted(pts, births)
    hi = np.searchsorted(pts, deaths)
    for i in range(n):
        for d in range(3):
            out[i, d] = path[hi[i], d] - path[lo[i], d]


@numba.njit(cache=True)
def _u_kernel(rng, norms, u):
    logw = 0.0
    for i in range(norms.size):
        u[i] = abs(rng.standard_normal()) / norms[i]
        logw -= math.log(norms[i])
    return logw


def sample_displacements(rng: np.random.Generator, excursion: Excursion) -> np.ndarray:
    """Jointly Gaussian 3-d increments ``X_{s_i,t_i}``; shape ``(n, 3)``."""
    out = np.empty((excursion.n, 3))
    if excursion.n:
        _displacement_kernel(rng, np.ascontiguousarray(excursion.births),
                             np.ascontiguousarray(excursion.deaths), out)
    return out


def sample_u(rng: np.random.Generator, displacement_norms) -> tuple[np.ndarray, float]:
    """Half-normal ``u_i`` with scale ``1/|X_i|`` and the importance log-weight.

    ``exp(log_weight_u) * E[g(u)]`` reproduces
    ``int du (2/pi)^{n/2} exp(-sum u_i^2 |X_i|^2 / 2) g(u)``.
    """
    norms = np.ascontiguousarray(displacement_norms, dtype=np.float64)
    if np.any(~(norms > 0)):
        raise InvalidParameterError("displacement norms must be strictly positive")
    u = np.empty_like(norms)
    logw = _u_kernel(rng, norms, u)
    return u, float(logw)


def dress(rng: np.random.Generator, excursion: Excursion) -> tuple[DressedExcursion, float]:
    """Attach displacements and ``u`` to an excursion; returns ``(dressed, log_weight_u)``."""
    x = sample_displacements(rng, excursion)
    norms = np.sqrt((x**2).sum(axis=1))
    u, logw_u = sample_u(rng, norms)
    return DressedExcursion(excursion, u, norms), logw_u


# -- compiled residual used by the ensemble hot loop ---------------------------

@numba.njit(cache=True)
def _sigma2_kernel(births, deaths, u, t):
    n = births.size
    idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if u[i] * u[i] > 0.0:
            idx[m] = i
            m += 1
    if m == 0:
        return t
    k = np.empty((m, m))
    ell = np.empty(m)
    for a in range(m):
        i = idx[a]
        ell[a] = max(0.0, min(deaths[i], t) - births[i])
        for b in range(a + 1):
            j = idx[b]
            v = max(0.0, min(deaths[i], deaths[j]) - max(births[i], births[j]))
            k[a, b] = v
        k[a, a] += 1.0 / (u[i] * u[i])
    # in-place lower Cholesky
    for a in range(m):
        acc = k[a, a]
        for c in range(a):
            acc -= k[a, c] * k[a, c]
        if not acc > 0.0:
            return np.nan
        k[a, a] = math.sqrt(acc)
        for b in range(a + 1, m):
            acc2 = k[b, a]
            for c in range(a):
                acc2 -= k[b, c] * k[a, c]
            k[b, a] = acc2 / k[a, a]
    # forward solve L y = ell; explained variance = |y|^2
    explained = 0.0
    for a in range(m):
        acc = ell[a]
        for c in range(a):
            acc -= k[a, c] * ell[c]
        ell[a] = acc / k[a, a]
        explained += ell[a] * ell[a]
    return t - explained


# -- deterministic u-integral (cross-checks only) ------------------------------

def u_integral_quadrature(intervals, g: Callable[[float], float], t: float | None = None,
                          **quad_kw) -> float:
    """``int du (2/pi)^{n/2} phi(xi, u) g(sigma2_t(xi, u))`` by adaptive quadrature.

    Only ``n <= 2`` is supported; ``t`` defaults to the last death.
    """
    s, e = _endpoints(intervals)
    n = s.size
    if n > 2:
        raise InvalidParameterError("quadrature path supports at most two intervals")
    if t is None:
        t = float(e.max()) if n else 0.0
    pairs = list(zip(s, e))
    if n == 0:
        return float(g(t))

    def integrand(*uu):
        uv = np.array(uu)
        return phi(pairs, uv) * g(sigma_squared_t(pairs, uv, t))

    opts = dict(epsabs=1e-11, epsrel=1e-9, limit=200)
    opts.update(quad_kw)
    if n == 1:
        val, _ = integrate.quad(lambda a: integrand(a), 0, np.inf, **opts)
        return float(math.sqrt(2 / math.pi) * val)
    val, _ = integrate.nquad(lambda a, b: integrand(a, b), [[0, np.inf], [0, np.inf]],
                             opts=[opts, opts])
    return float((2 / math.pi) * val)


__all__ = [
    "DressedExcursion", "overlap_matrix", "sigma_squared_t", "sigma_squared", "phi",
    "log_phi", "sample_displacements", "sample_u", "dress", "u_integral_quadrature",
]
