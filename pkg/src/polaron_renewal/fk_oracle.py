"""Direct path-integral Monte Carlo for ``f_P(T)`` and weak-coupling anchors.

The estimator averages ``cos(P X_T[0]) exp(alpha/2 * S)`` over Brownian paths
with ``S = int_0^T int_0^T exp(-|t-s|) / |X_t - X_s| ds dt``.  Off-diagonal
cells of the double integral use the midpoint rule; on the diagonal the
``1/|X|`` singularity is replaced by its expectation ``sqrt(2/(pi r))``,
integrated exactly over the cell.  Only useful for small ``alpha * T``; the
variance grows exponentially in ``T``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
from scipy import integrate

from .ensemble import shard_rng
from .errors import DiagnosticError, InvalidParameterError

DEFAULT_STEPS = 800
DEFAULT_PATHS = 100_000
SINE_SIGMA = 4.0


@dataclass(frozen=True)
class PathConfig:
    T: float
    steps: int = DEFAULT_STEPS
    paths: int = DEFAULT_PATHS
    alpha: float = 0.0
    P: float = 0.0

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidParameterError(f"T must be positive, got {self.T!r}")
        if int(self.steps) != self.steps or self.steps < 2:
            raise InvalidParameterError(f"steps must be an integer >= 2, got {self.steps!r}")
        if int(self.paths) != self.paths or self.paths < 2:
            raise InvalidParameterError(f"paths must be an integer >= 2, got {self.paths!r}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise InvalidParameterError(f"alpha must be >= 0, got {self.alpha!r}")
        if not math.isfinite(self.P):
            raise InvalidParameterError("P must be finite")

    @property
    def h(self) -> float:
        return self.T / self.steps


def diagonal_cell(h: float) -> float:
    """``2 int_0^h (h - r) exp(-r) sqrt(2/(pi r)) dr`` (substituting ``r = x^2``)."""
    c = math.sqrt(2.0 / math.pi)
    val, _ = integrate.quad(lambda x: 2.0 * (h - x * x) * math.exp(-x * x) * c, 0.0, math.sqrt(h),
                            epsabs=0.0, epsrel=1e-13)
    return 2.0 * val


@numba.njit(cache=True)
def _double_sum(path, cells, stride, h, lag_weight, diag):
    # cell midpoints sit at path indices stride * (2i + 1)
    acc = 0.0
    for i in range(cells):
        a = stride * (2 * i + 1)
        x0 = path[a, 0]
        y0 = path[a, 1]
        z0 = path[a, 2]
        for j in range(i + 1, cells):
            b = stride * (2 * j + 1)
            dx = path[b, 0] - x0
            dy = path[b, 1] - y0
            dz = path[b, 2] - z0
            acc += lag_weight[j - i] / math.sqrt(dx * dx + dy * dy + dz * dz)
    return 2.0 * h * h * acc + cells * diag


@numba.njit(cache=True)
def _fk_paths(rng, T, cells, paths, refine, lag_c, diag_c, lag_f, diag_f, s_coarse, s_fine, xT):
    """Simulate ``paths`` Brownian paths on ``2 * cells * refine`` increments.

    Fills the coarse double sum (``cells`` cells) and, when ``refine == 2``,
    the double sum on the halved grid from the same path.
    """
    n = 2 * cells * refine
    sd = math.sqrt(T / n)
    path = np.zeros((n + 1, 3))
    h = T / cells
    for p in range(paths):
        for k in range(1, n + 1):
            for d in range(3):
                path[k, d] = path[k - 1, d] + sd * rng.standard_normal()
        s_coarse[p] = _double_sum(path, cells, refine, h, lag_c, diag_c)
        if refine == 2:
            s_fine[p] = _double_sum(path, 2 * cells, 1, 0.5 * h, lag_f, diag_f)
        xT[p] = path[n, 0]


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _lag_table(cells: int, h: float) -> np.ndarray:
    """Weight of an off-diagonal cell pair at lag ``k`` (``k >= 1``).

    Plain midpoint would use ``exp(-k h)``.  Instead each weight is the cell-pair
    average of ``exp(-r) / sqrt(r)`` times ``sqrt(k h)``, which makes the
    expectation of every midpoint term exact for free Brownian motion and
    removes the ``O(sqrt(h))`` bias of the near-diagonal cells.
    """
    out = np.zeros(cells)
    if cells < 2:
        return out

    def f(r):
        return np.exp(-r) / np.sqrt(r)

    # r = t - s is triangular on [(k-1)h, (k+1)h]; lag 1 touches r = 0, use r = x^2
    rising, _ = integrate.quad(lambda x: 2.0 * x * x / h * f(x * x) * x, 0.0, math.sqrt(h),
                               epsabs=0.0, epsrel=1e-13)
    falling, _ = integrate.quad(lambda r: (2 * h - r) / h * f(r), h, 2 * h, epsabs=0.0, epsrel=1e-13)
    out[1] = (rising + falling) / h * math.sqrt(h)
    k = np.arange(2, cells)[:, None]
    x = 0.5 * (_GL_X + 1.0)[None, :]
    w = 0.5 * _GL_W[None, :]
    up = (k - 1 + x) * h
    down = (k + x) * h
    avg = (w * x * f(up)).sum(axis=1) + (w * (1.0 - x) * f(down)).sum(axis=1)
    out[2:] = avg * np.sqrt(k[:, 0] * h)
    return out


def simulate_action(rng: np.random.Generator, T: float, steps: int, paths: int,
                    *, halve: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Per-path ``(S, X_T[0], S_halved)``; the halved-step sums reuse the same paths."""
    h = T / steps
    refine = 2 if halve else 1
    s_coarse = np.empty(paths)
    s_fine = np.empty(paths) if halve else np.empty(0)
    xT = np.empty(paths)
    lag_f = _lag_table(2 * steps, h / 2) if halve else np.empty(1)
    _fk_paths(rng, float(T), int(steps), int(paths), refine,
              _lag_table(steps, h), diagonal_cell(h),
              lag_f, diagonal_cell(h / 2) if halve else 0.0,
              s_coarse, s_fine, xT)
    return s_coarse, xT, (s_fine if halve else None)


@dataclass(frozen=True)
class FKEstimate:
    value: float
    stderr: float
    sine: float
    sine_stderr: float
    paths: int

    def __iter__(self):
        yield self.value
        yield self.stderr


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def estimate_from_action(S: np.ndarray, xT: np.ndarray, alpha: float, P: float,
                         *, check_sine: bool = True) -> FKEstimate:
    w = np.exp(0.5 * alpha * S)
    value, se = _mean_se(np.cos(P * xT) * w)
    sine, sine_se = _mean_se(np.sin(P * xT) * w)
    if check_sine and abs(sine) > SINE_SIGMA * sine_se and sine_se > 0:
        raise DiagnosticError(
            f"imaginary part {sine:.4g} is {abs(sine) / sine_se:.1f} stderr from zero")
    return FKEstimate(value, se, sine, sine_se, int(S.size))


def fk_estimate(rng: np.random.Generator, config: PathConfig) -> FKEstimate:
    """Monte Carlo estimate of ``<Omega, exp(-T H(P)) Omega>``; unpacks as ``(value, stderr)``."""
    S, xT, _ = simulate_action(rng, config.T, config.steps, config.paths)
    return estimate_from_action(S, xT, config.alpha, config.P)


def fk_step_halving(rng: np.random.Generator, config: PathConfig) -> tuple[FKEstimate, FKEstimate]:
    """Estimates at ``steps`` and ``2 * steps`` on common random paths."""
    S, xT, S2 = simulate_action(rng, config.T, config.steps, config.paths, halve=True)
    return (estimate_from_action(S, xT, config.alpha, config.P),
            estimate_from_action(S2, xT, config.alpha, config.P))


def _shard_action(args):
    base_seed, k, T, steps, paths = args
    S, xT, _ = simulate_action(shard_rng(base_seed, k), T, steps, paths)
    return S, xT


def sharded_action(T: float, steps: int, paths: int, base_seed: int, shards: int = 1,
                   threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Per-path ``(S, X_T[0])`` with paths split across seeded shards; thread-count independent."""
    if shards < 1 or paths % shards:
        raise InvalidParameterError("paths must be divisible by a positive shard count")
    jobs = [(base_seed, k, T, steps, paths // shards) for k in range(shards)]
    if threads > 1 and shards > 1:
        with ProcessPoolExecutor(max_workers=min(threads, shards)) as pool:
            parts = list(pool.map(_shard_action, jobs))
    else:
        parts = [_shard_action(j) for j in jobs]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def fk_estimate_sharded(config: PathConfig, base_seed: int, shards: int = 1,
                        threads: int = 1) -> FKEstimate:
    S, xT = sharded_action(config.T, config.steps, config.paths, base_seed, shards, threads)
    return estimate_from_action(S, xT, config.alpha, config.P)


# -- second-order weak-coupling anchors ---------------------------------------

_SELF_CHECK = 1e-8


def _radial(f) -> float:
    val, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)
    return val


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (alpha > 0 and math.isfinite(alpha)):
        raise InvalidParameterError(f"alpha must be a positive finite number, got {alpha!r}")
    return alpha


def perturbative_E0(alpha: float) -> float:
    """Second-order ground-state energy ``-sqrt(2) alpha``.

    ``-int |v(k)|^2 / (k^2/2 + 1) d^3k`` with ``|v(k)|^2 = alpha / (2 pi^2 k^2)``
    reduces to ``-(2 alpha / pi) int_0^inf dk / (k^2/2 + 1)``.
    """
    alpha = _check_alpha(alpha)
    closed = -math.sqrt(2.0) * alpha
    quad = -(2.0 * alpha / math.pi) * _radial(lambda k: 1.0 / (0.5 * k * k + 1.0))
    if abs(quad - closed) > _SELF_CHECK * max(1.0, abs(closed)):
        raise DiagnosticError(f"E0 quadrature {quad!r} disagrees with closed form {closed!r}")
    return closed


def perturbative_meff(alpha: float) -> float:
    """First-order effective mass ``1 + sqrt(2) alpha / 6``.

    From ``1/m = 1 - (2/3) int |v|^2 k^2 / (k^2/2 + 1)^3 d^3k``, expanded to
    first order in ``alpha``.
    """
    alpha = _check_alpha(alpha)
    closed = 1.0 + math.sqrt(2.0) * alpha / 6.0
    shift = (2.0 / 3.0) * (2.0 * alpha / math.pi) * _radial(lambda k: k * k / (0.5 * k * k + 1.0) ** 3)
    quad = 1.0 + shift
    if abs(quad - closed) > _SELF_CHECK * closed:
        raise DiagnosticError(f"m_eff quadrature {quad!r} disagrees with closed form {closed!r}")
    return closed


__all__ = [
    "PathConfig", "FKEstimate", "fk_estimate", "fk_step_halving", "fk_estimate_sharded",
    "simulate_action", "sharded_action", "estimate_from_action", "diagonal_cell",
    "perturbative_E0", "perturbative_meff",
]
