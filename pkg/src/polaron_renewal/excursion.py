"""Busy cycles of the birth-death point process.

Individuals are born at constant rate ``alpha`` (independent of the current
population) and each living individual dies at rate 1.  An *excursion* starts
at time 0 with nobody alive, contains the first birth and ends at the first
subsequent time the population is zero again.  Its end point ``tau`` is the
renewal time of the process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .errors import InvalidParameterError, ResourceLimitError

DEFAULT_MAX_N = 10_000
DEFAULT_MAX_TAU = 1_000.0

# kernel status codes
_OK = 0
_CAP_N = 1
_CAP_TAU = 2


@dataclass(frozen=True)
class Interval:
    """Lifetime ``[birth, death)`` of one individual."""

    birth: float
    death: float

    def __post_init__(self):
        if not (0.0 <= self.birth < self.death):
            raise InvalidParameterError(
                f"interval needs 0 <= birth < death, got ({self.birth}, {self.death})"
            )

    @property
    def length(self) -> float:
        return self.death - self.birth


@dataclass(frozen=True, eq=False)
class Excursion:
    """One busy cycle, stored column-wise.

    ``births``/``deaths`` are sorted by birth time (ties by death time) and
    ``tau`` is the time the population returns to zero, i.e. the latest death.
    """

    births: np.ndarray
    deaths: np.ndarray
    tau: float = field(default=float("nan"))

    def __post_init__(self):
        births = np.asarray(self.births, dtype=np.float64)
        deaths = np.asarray(self.deaths, dtype=np.float64)
        if births.shape != deaths.shape or births.ndim != 1:
            raise InvalidParameterError("births and deaths must be 1-d arrays of equal length")
        order = np.lexsort((deaths, births))
        births = births[order]
        deaths = deaths[order]
        births.setflags(write=False)
        deaths.setflags(write=False)
        object.__setattr__(self, "births", births)
        object.__setattr__(self, "deaths", deaths)
        if math.isnan(self.tau):
            object.__setattr__(self, "tau", float(deaths.max()) if deaths.size else 0.0)

    @classmethod
    def from_intervals(cls, intervals: Sequence[Interval | tuple[float, float]],
                       tau: float | None = None) -> "Excursion":
        pairs = [(iv.birth, iv.death) if isinstance(iv, Interval) else tuple(iv) for iv in intervals]
        for s, t in pairs:
            Interval(s, t)
        b = np.array([p[0] for p in pairs], dtype=np.float64)
        d = np.array([p[1] for p in pairs], dtype=np.float64)
        return cls(b, d, float("nan") if tau is None else float(tau))

    @property
    def n(self) -> int:
        return int(self.births.size)

    @property
    def intervals(self) -> list[Interval]:
        return [Interval(float(s), float(t)) for s, t in zip(self.births, self.deaths)]

    def __eq__(self, other):
        if not isinstance(other, Excursion):
            return NotImplemented
        return (self.tau == other.tau and np.array_equal(self.births, other.births)
                and np.array_equal(self.deaths, other.deaths))

    def __repr__(self):
        return f"Excursion(n={self.n}, tau={self.tau!r})"


def alive_count(excursion: Excursion, t) -> np.ndarray | int:
    """Number of individuals with ``birth <= t < death`` (right-continuous)."""
    t_arr = np.asarray(t, dtype=np.float64)
    b = np.sort(excursion.births)
    d = np.sort(excursion.deaths)
    born = np.searchsorted(b, t_arr, side="right")
    dead = np.searchsorted(d, t_arr, side="right")
    out = born - dead
    return int(out) if out.ndim == 0 else out


def check_excursion(excursion: Excursion) -> None:
    """Raise if any structural invariant of a busy cycle is violated."""
    b, d, tau = excursion.births, excursion.deaths, excursion.tau
    if excursion.n < 1:
        raise InvalidParameterError("an excursion contains at least one individual")
    if not b[0] > 0.0:
        raise InvalidParameterError("first birth must be strictly positive")
    if np.any(b >= d):
        raise InvalidParameterError("every interval needs birth < death")
    if np.any(b >= tau) or np.any(d > tau):
        raise InvalidParameterError("all intervals must lie inside [0, tau]")
    if d.max() != tau:
        raise InvalidParameterError("tau must equal the last death")
    # the population may only hit zero at tau: check just after every death
    inner = d[d < tau]
    if inner.size and np.any(alive_count(excursion, inner) < 1):
        raise InvalidParameterError("population returns to zero before tau")


@numba.njit(cache=True)
def _excursion_kernel(rng, alpha, max_n, max_tau, births, deaths, alive):
    """Event-driven simulation of one busy cycle into preallocated buffers.

    Returns ``(n, t, status)``; on a cap breach ``n``/``t`` are the partial
    values at the time of the breach.
    """
    t = rng.standard_exponential() / alpha
    if t > max_tau:
        return 0, t, _CAP_TAU
    births[0] = t
    deaths[0] = np.nan
    alive[0] = 0
    n = 1
    k = 1
    while k > 0:
        # competing clocks: one birth clock and one death clock for the k alive
        next_birth = rng.standard_exponential() / alpha
        next_death = rng.standard_exponential() / k
        if next_birth < next_death:
            t += next_birth
            if n >= max_n:
                return n, t, _CAP_N
            births[n] = t
            deaths[n] = np.nan
            alive[k] = n
            n += 1
            k += 1
        else:
            t += next_death
            j = int(rng.random() * k)
            if j >= k:
                j = k - 1
            deaths[alive[j]] = t
            alive[j] = alive[k - 1]
            k -= 1
        if t > max_tau:
            return n, t, _CAP_TAU
    return n, t, _OK


def _raise_cap(status: int, n: int, t: float, max_n: int, max_tau: float):
    if status == _CAP_N:
        raise ResourceLimitError(
            f"excursion exceeded max_n={max_n} individuals (t={t:.6g} at breach)", n=n, t=t)
    raise ResourceLimitError(
        f"excursion exceeded max_tau={max_tau:g} (n={n} at breach)", n=n, t=t)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise InvalidParameterError(f"alpha must be a positive finite number, got {alpha!r}")
    return alpha


def sample_excursion(rng: np.random.Generator, alpha: float, *, max_n: int = DEFAULT_MAX_N,
                     max_tau: float = DEFAULT_MAX_TAU) -> Excursion:
    """Draw one busy cycle of the birth-death process.

    The first birth happens after an ``Exp(alpha)`` waiting time; afterwards
    births arrive at rate ``alpha`` and every living individual dies at rate 1
    until nobody is left.  Exceeding ``max_n`` individuals or ``max_tau`` raises
    :class:`ResourceLimitError`.
    """
    alpha = _check_alpha(alpha)
    births = np.empty(max_n, dtype=np.float64)
    deaths = np.empty(max_n, dtype=np.float64)
    alive = np.empty(max_n, dtype=np.int64)
    n, t, status = _excursion_kernel(rng, alpha, max_n, float(max_tau), births, deaths, alive)
    if status != _OK:
        _raise_cap(status, n, t, max_n, max_tau)
    return Excursion(births[:n].copy(), deaths[:n].copy(), t)


@dataclass(frozen=True)
class ExcursionSummary:
    count: int
    mean_n: float
    stderr_n: float
    max_n: int
    mean_tau: float
    stderr_tau: float
    max_tau: float
    # total time spent at each population level 0, 1, 2, ... summed over excursions
    occupancy: np.ndarray


def excursion_summary(excursions: Sequence[Excursion]) -> ExcursionSummary:
    if len(excursions) == 0:
        raise InvalidParameterError("excursion_summary needs at least one excursion")
    ns = np.array([e.n for e in excursions], dtype=np.float64)
    taus = np.array([e.tau for e in excursions], dtype=np.float64)
    count = len(excursions)

    def _se(x):
        return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0

    occupancy = np.zeros(1)
    for e in excursions:
        # piecewise-constant population: +1 at births, -1 at deaths
        times = np.concatenate(([0.0], e.births, e.deaths))
        steps = np.concatenate(([0], np.ones(e.n, dtype=int), -np.ones(e.n, dtype=int)))
        order = np.argsort(times, kind="stable")
        times, steps = times[order], steps[order]
        level = np.cumsum(steps)[:-1]
        dt = np.diff(times)
        if level.max(initial=0) + 1 > occupancy.size:
            occupancy = np.pad(occupancy, (0, level.max() + 1 - occupancy.size))
        np.add.at(occupancy, level, dt)

    return ExcursionSummary(
        count=count,
        mean_n=float(ns.mean()), stderr_n=_se(ns), max_n=int(ns.max()),
        mean_tau=float(taus.mean()), stderr_tau=_se(taus), max_tau=float(taus.max()),
        occupancy=occupancy,
    )
