"""Empirical representation of the renewal measure.

Every draw yields one row ``(tau, sigma2, logw, n)``: an excursion with its
end time ``tau``, the residual variance ``sigma2`` of the dressed excursion,
and the log of the importance weight ``w = exp(alpha * tau) * prod 1/|X_i|``.
For any integrable ``g``, the mean of ``w * g(tau, sigma2)`` over draws is the
renewal-measure integral of ``g``.  Every estimator downstream reads only these
three columns, so one ensemble serves all momenta and spectral parameters.
"""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numba
import numpy as np

from .errors import (DiagnosticError, EnsembleFormatError, EnsembleMismatchError,
                     InvalidParameterError, NumericalError, ResourceLimitError)
from .excursion import (DEFAULT_MAX_N, DEFAULT_MAX_TAU, _CAP_N, _OK, _check_alpha,
                        _excursion_kernel)
from .geometry import NEGATIVE_SIGMA2_TOL, _displacement_kernel, _sigma2_kernel, _u_kernel

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DressedSample:
    tau: float
    sigma2: float
    logw: float
    n: int

    def __post_init__(self):
        if not (0 < self.sigma2 <= self.tau + NEGATIVE_SIGMA2_TOL):
            raise InvalidParameterError(f"need 0 < sigma2 <= tau, got {self.sigma2}, {self.tau}")
        if self.n < 1 or not math.isfinite(self.logw):
            raise InvalidParameterError("need n >= 1 and a finite log-weight")


@dataclass(frozen=True)
class EnsembleMeta:
    alpha: float
    base_seed: int | None
    shards: int
    samples_per_shard: int
    version: int = FORMAT_VERSION
    # left unset by default so that regenerated files are byte-identical
    created: str | None = None

    @property
    def count(self) -> int:
        return self.shards * self.samples_per_shard


class Ensemble:
    """Immutable column store of dressed samples plus generation metadata."""

    __slots__ = ("meta", "tau", "sigma2", "logw", "n")

    def __init__(self, meta: EnsembleMeta, tau, sigma2, logw, n):
        cols = [np.array(tau, dtype=np.float64), np.array(sigma2, dtype=np.float64),
                np.array(logw, dtype=np.float64), np.array(n, dtype=np.int64)]
        size = cols[0].size
        if any(c.ndim != 1 or c.size != size for c in cols):
            raise InvalidParameterError("ensemble columns must be 1-d with equal length")
        if size != meta.count:
            raise InvalidParameterError(
                f"row count {size} != shards x samples_per_shard = {meta.count}")
        for c in cols:
            c.setflags(write=False)
        self.meta = meta
        self.tau, self.sigma2, self.logw, self.n = cols

    @classmethod
    def from_rows(cls, alpha: float, rows: Sequence[DressedSample | tuple]) -> "Ensemble":
        """Synthetic ensemble (no seed) from explicit rows."""
        rows = [r if isinstance(r, DressedSample) else DressedSample(*r) for r in rows]
        meta = EnsembleMeta(alpha=float(alpha), base_seed=None, shards=1,
                            samples_per_shard=len(rows))
        return cls(meta, [r.tau for r in rows], [r.sigma2 for r in rows],
                   [r.logw for r in rows], [r.n for r in rows])

    def __len__(self):
        return int(self.tau.size)

    def __iter__(self) -> Iterator[DressedSample]:
        for j in range(len(self)):
            yield self[j]

    def __getitem__(self, j: int) -> DressedSample:
        return DressedSample(float(self.tau[j]), float(self.sigma2[j]), float(self.logw[j]),
                             int(self.n[j]))

    def __eq__(self, other):
        if not isinstance(other, Ensemble):
            return NotImplemented
        return (self.meta == other.meta and np.array_equal(self.tau, other.tau)
                and np.array_equal(self.sigma2, other.sigma2)
                and np.array_equal(self.logw, other.logw) and np.array_equal(self.n, other.n))

    def __repr__(self):
        return f"Ensemble(alpha={self.meta.alpha}, rows={len(self)}, seed={self.meta.base_seed})"

    def with_sigma2(self, sigma2) -> "Ensemble":
        """Copy with the ``sigma2`` column replaced (used by mutation checks)."""
        return Ensemble(self.meta, self.tau, sigma2, self.logw, self.n)


# -- seeding ------------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def shard_seed(base_seed: int, shard: int) -> int:
    """Seed of shard ``k``: ``splitmix64(splitmix64(base_seed) + k)`` modulo 2**64."""
    return splitmix64((splitmix64(base_seed & _MASK64) + shard) & _MASK64)


def shard_rng(base_seed: int, shard: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(shard_seed(base_seed, shard)))


# -- drawing ------------------------------------------------------------------

@numba.njit(cache=True)
def _draw_rows(rng, alpha, count, max_n, max_tau, out_tau, out_sigma2, out_logw, out_n):
    """Fill ``count`` rows; returns ``(status, draw, n, t)`` (status 3 = bad sigma2)."""
    births = np.empty(max_n)
    deaths = np.empty(max_n)
    alive = np.empty(max_n, dtype=np.int64)
    for j in range(count):
        n, t, status = _excursion_kernel(rng, alpha, max_n, max_tau, births, deaths, alive)
        if status != 0:
            return status, j, n, t
        b = births[:n].copy()
        d = deaths[:n].copy()
        x = np.empty((n, 3))
        _displacement_kernel(rng, b, d, x)
        norms = np.empty(n)
        for i in range(n):
            norms[i] = math.sqrt(x[i, 0] * x[i, 0] + x[i, 1] * x[i, 1] + x[i, 2] * x[i, 2])
        u = np.empty(n)
        logw_u = _u_kernel(rng, norms, u)
        s2 = _sigma2_kernel(b, d, u, t)
        if not (s2 > 0.0):
            return 3, j, n, t
        out_tau[j] = t
        out_sigma2[j] = s2
        out_logw[j] = alpha * t + logw_u
        out_n[j] = n
    return 0, count, 0, 0.0


def _draw_into(rng, alpha, count, max_n, max_tau):
    cols = (np.empty(count), np.empty(count), np.empty(count), np.empty(count, dtype=np.int64))
    status, j, n, t = _draw_rows(rng, alpha, count, max_n, float(max_tau), *cols)
    if status == 3:
        raise NumericalError(f"non-positive residual variance at draw {j} (n={n}, tau={t})")
    if status != _OK:
        what = f"max_n={max_n}" if status == _CAP_N else f"max_tau={max_tau:g}"
        raise ResourceLimitError(f"draw {j}: excursion exceeded {what} (n={n}, t={t:.6g})",
                                 n=n, t=t, draw=j)
    return cols


def draw_dressed_sample(rng: np.random.Generator, alpha: float, *, max_n: int = DEFAULT_MAX_N,
                        max_tau: float = DEFAULT_MAX_TAU) -> DressedSample:
    """One row: excursion, then displacements, then ``u``, then ``sigma2``."""
    alpha = _check_alpha(alpha)
    tau, s2, logw, n = _draw_into(rng, alpha, 1, max_n, max_tau)
    return DressedSample(float(tau[0]), float(s2[0]), float(logw[0]), int(n[0]))


def _generate_shard(args):
    alpha, base_seed, shard, count, max_n, max_tau = args
    try:
        return _draw_into(shard_rng(base_seed, shard), alpha, count, max_n, max_tau)
    except ResourceLimitError as exc:
        raise ResourceLimitError(f"shard {shard}, {exc}", n=exc.n, t=exc.t, shard=shard,
                                 draw=exc.draw) from None


def generate_ensemble(alpha: float, shards: int, samples_per_shard: int, base_seed: int, *,
                      threads: int = 1, max_n: int = DEFAULT_MAX_N,
                      max_tau: float = DEFAULT_MAX_TAU, created: str | None = None) -> Ensemble:
    """Sharded generation; rows are concatenated in shard order then draw order.

    Shard ``k`` draws from a PCG64 stream seeded by :func:`shard_seed`, so the
    result does not depend on ``threads``.
    """
    alpha = _check_alpha(alpha)
    for name, v in (("shards", shards), ("samples_per_shard", samples_per_shard)):
        if int(v) != v or v < 1:
            raise InvalidParameterError(f"{name} must be a positive integer, got {v!r}")
    if int(base_seed) != base_seed or base_seed < 0:
        raise InvalidParameterError(f"base_seed must be a nonnegative integer, got {base_seed!r}")
    jobs = [(alpha, int(base_seed), k, int(samples_per_shard), int(max_n), float(max_tau))
            for k in range(int(shards))]
    if threads > 1 and shards > 1:
        with ProcessPoolExecutor(max_workers=min(threads, shards)) as pool:
            parts = list(pool.map(_generate_shard, jobs))
    else:
        parts = [_generate_shard(job) for job in jobs]
    cols = [np.concatenate([p[i] for p in parts]) for i in range(4)]
    meta = EnsembleMeta(alpha=alpha, base_seed=int(base_seed), shards=int(shards),
                        samples_per_shard=int(samples_per_shard), created=created)
    return Ensemble(meta, *cols)


def merge_ensembles(*ensembles: Ensemble) -> Ensemble:
    """Row-wise union of ensembles drawn at the same coupling."""
    if not ensembles:
        raise InvalidParameterError("nothing to merge")
    alpha = ensembles[0].meta.alpha
    if any(e.meta.alpha != alpha for e in ensembles):
        raise EnsembleMismatchError("cannot merge ensembles with different alpha")
    sps = {e.meta.samples_per_shard for e in ensembles}
    total = sum(len(e) for e in ensembles)
    if len(sps) == 1:
        meta = EnsembleMeta(alpha, None, sum(e.meta.shards for e in ensembles), sps.pop())
    else:
        meta = EnsembleMeta(alpha, None, total, 1)
    cols = [np.concatenate([getattr(e, c) for e in ensembles])
            for c in ("tau", "sigma2", "logw", "n")]
    return Ensemble(meta, *cols)


def require_alpha(ensemble: Ensemble, alpha: float | None) -> None:
    """Refuse to reuse an ensemble generated at a different coupling."""
    if alpha is None:
        return
    if not math.isclose(ensemble.meta.alpha, float(alpha), rel_tol=1e-12, abs_tol=0.0):
        raise EnsembleMismatchError(
            f"ensemble was generated at alpha={ensemble.meta.alpha!r}, requested alpha={alpha!r}")


# -- weights ------------------------------------------------------------------

def log_terms(ensemble: Ensemble, P: float, lam: float) -> np.ndarray:
    """``logw - P^2 sigma2 / 2 + lam * tau`` per row."""
    return ensemble.logw - 0.5 * P * P * ensemble.sigma2 + lam * ensemble.tau


@dataclass(frozen=True)
class WeightDiagnostics:
    ess: float
    max_share: float


def ess(ensemble: Ensemble, P: float, lam: float) -> WeightDiagnostics:
    """Effective sample size ``(sum w)^2 / sum w^2`` and largest weight share."""
    if len(ensemble) == 0:
        raise InvalidParameterError("empty ensemble")
    a = log_terms(ensemble, P, lam)
    return weight_diagnostics(a)


def weight_diagnostics(a: np.ndarray) -> WeightDiagnostics:
    top = float(np.max(a))
    if not np.isfinite(top) or math.exp(min(top, 0.0)) == 0.0:
        raise DiagnosticError("all weights underflow to zero")
    r = np.exp(a - top)
    s1 = float(r.sum())
    s2 = float((r * r).sum())
    return WeightDiagnostics(ess=s1 * s1 / s2, max_share=1.0 / s1)


# -- persistence --------------------------------------------------------------

@numba.njit(cache=True)
def _fnv1a64_kernel(data):
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    for i in range(data.size):
        h ^= np.uint64(data[i])
        h *= prime
    return h


def fnv1a64(data: bytes) -> int:
    return int(_fnv1a64_kernel(np.frombuffer(data, dtype=np.uint8)))


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _header(meta: EnsembleMeta) -> str:
    fields = [("version", str(meta.version)), ("alpha", _fmt(meta.alpha)),
              ("base_seed", "none" if meta.base_seed is None else str(meta.base_seed)),
              ("shards", str(meta.shards)), ("samples_per_shard", str(meta.samples_per_shard)),
              ("count", str(meta.count))]
    if meta.created is not None:
        fields.append(("created", meta.created))
    return " ".join(f"{k}:{v}" for k, v in fields)


def dumps_ensemble(ensemble: Ensemble) -> bytes:
    buf = io.StringIO()
    buf.write(_header(ensemble.meta) + "\n")
    for t, s, w, n in zip(ensemble.tau.tolist(), ensemble.sigma2.tolist(),
                          ensemble.logw.tolist(), ensemble.n.tolist()):
        buf.write(f"{t:.17g},{s:.17g},{w:.17g},{n}\n")
    body = buf.getvalue().encode("ascii")
    return body + f"checksum:{fnv1a64(body):016x}\n".encode("ascii")


def save_ensemble(ensemble: Ensemble, path: str | Path) -> None:
    Path(path).write_bytes(dumps_ensemble(ensemble))


def _parse_header(line: str) -> EnsembleMeta:
    raw = {}
    for tok in line.split():
        key, sep, val = tok.partition(":")
        if not sep:
            raise EnsembleFormatError(f"malformed header token {tok!r}", line=1)
        raw[key] = val
    required = ("version", "alpha", "base_seed", "shards", "samples_per_shard", "count")
    missing = [k for k in required if k not in raw]
    if missing:
        raise EnsembleFormatError(f"header lacks {', '.join(missing)}", line=1)
    try:
        version = int(raw["version"])
    except ValueError:
        raise EnsembleFormatError("non-integer version", line=1) from None
    if version != FORMAT_VERSION:
        raise EnsembleFormatError(
            f"unsupported format version {version} (expected {FORMAT_VERSION})", line=1)
    try:
        meta = EnsembleMeta(
            alpha=float(raw["alpha"]),
            base_seed=None if raw["base_seed"] == "none" else int(raw["base_seed"]),
            shards=int(raw["shards"]), samples_per_shard=int(raw["samples_per_shard"]),
            version=version, created=raw.get("created"))
        count = int(raw["count"])
    except ValueError as exc:
        raise EnsembleFormatError(f"bad header value: {exc}", line=1) from None
    if count != meta.count:
        raise EnsembleFormatError("header count disagrees with shards x samples_per_shard", line=1)
    return meta


def _parse_rows(lines: list[str], first_line: int) -> tuple[np.ndarray, ...]:
    try:
        arr = np.loadtxt(io.StringIO("\n".join(lines)), delimiter=",", dtype=np.float64, ndmin=2)
        if arr.shape[1] != 4 and lines:
            raise ValueError
    except ValueError:
        arr = None
    if arr is None or np.any(arr[:, 3] != np.round(arr[:, 3])):
        # slow path, only to name the offending line
        for i, ln in enumerate(lines):
            parts = ln.split(",")
            try:
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                [float(p) for p in parts[:3]]
                int(parts[3])
            except ValueError as exc:
                raise EnsembleFormatError(f"malformed row {i}: {exc}", line=first_line + i) from None
        raise EnsembleFormatError("malformed rows", line=first_line)
    if not lines:
        arr = np.empty((0, 4))
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(np.int64)


def loads_ensemble(data: bytes) -> Ensemble:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise EnsembleFormatError("file is not ASCII text") from None
    lines = text.split("\n")
    if not lines or not lines[0]:
        raise EnsembleFormatError("empty file", line=1)
    meta = _parse_header(lines[0])
    if lines[-1] == "":
        lines.pop()
    last = lines[-1] if len(lines) > 1 else ""
    if not last.startswith("checksum:"):
        nrows = len(lines) - 1
        raise EnsembleFormatError(
            f"no checksum line: file truncated after row {nrows - 1} "
            f"(expected {meta.count} rows)", line=len(lines))
    body_end = text.rfind("checksum:")
    want = last[len("checksum:"):]
    got = f"{fnv1a64(data[:body_end]):016x}"
    if want != got:
        # a malformed row is a more useful diagnosis than the checksum itself
        _parse_rows(lines[1:-1], first_line=2)
        raise EnsembleFormatError(f"checksum mismatch (stored {want}, computed {got})",
                                  line=len(lines))
    rows = lines[1:-1]
    if len(rows) != meta.count:
        raise EnsembleFormatError(
            f"expected {meta.count} rows, found {len(rows)}; row {len(rows)} is missing",
            line=len(lines))
    cols = _parse_rows(rows, first_line=2)
    ens = Ensemble(meta, *cols)
    bad = np.flatnonzero(~((ens.sigma2 > 0) & (ens.sigma2 <= ens.tau + NEGATIVE_SIGMA2_TOL)
                           & (ens.n >= 1) & np.isfinite(ens.logw)))
    if bad.size:
        raise EnsembleFormatError(f"row {bad[0]} violates 0 < sigma2 <= tau, n >= 1",
                                  line=int(bad[0]) + 2)
    return ens


def load_ensemble(path: str | Path, *, alpha: float | None = None) -> Ensemble:
    """Read an ensemble file; ``alpha`` (if given) must match the header."""
    ens = loads_ensemble(Path(path).read_bytes())
    require_alpha(ens, alpha)
    return ens


def regenerate(meta: EnsembleMeta, **kw) -> Ensemble:
    """Rebuild an ensemble from its metadata (seeded ensembles only)."""
    if meta.base_seed is None:
        raise InvalidParameterError("synthetic or merged ensembles cannot be regenerated")
    return generate_ensemble(meta.alpha, meta.shards, meta.samples_per_shard, meta.base_seed,
                             created=meta.created, **kw)


__all__ = [
    "DressedSample", "EnsembleMeta", "Ensemble", "draw_dressed_sample", "generate_ensemble",
    "merge_ensembles", "require_alpha", "ess", "save_ensemble", "load_ensemble",
    "dumps_ensemble", "loads_ensemble", "shard_seed", "shard_rng", "splitmix64", "fnv1a64",
    "log_terms", "weight_diagnostics", "regenerate", "WeightDiagnostics",
]
