"""Cross-checks run by ``polaron-renewal validate`` and the acceptance tests.

Each check returns a :class:`CheckResult` with the numbers it compared and its
wall time; a check passes only if the numbers agree *and* it finished within
its time budget.
"""

from __future__ import annotations

import io
import math
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from . import fk_oracle, geometry, renewal, spectral
from .ensemble import (Ensemble, dumps_ensemble, generate_ensemble, load_ensemble,
                       merge_ensembles, save_ensemble)


@dataclass(frozen=True)
class Scale:
    rows: int
    geometry_instances: int
    mixture_instances: int
    mixture_draws: int
    fk_paths: int
    fk_steps: int
    shards: int = 8


FULL = Scale(rows=1_000_000, geometry_instances=100, mixture_instances=20, mixture_draws=100_000,
             fk_paths=100_000, fk_steps=400)
QUICK = Scale(rows=80_000, geometry_instances=20, mixture_instances=5, mixture_draws=20_000,
              fk_paths=10_000, fk_steps=100)
SCALES = {"full": FULL, "quick": QUICK}


@dataclass
class CheckResult:
    key: int
    name: str
    passed: bool
    summary: str
    runtime: float
    budget: float
    values: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        return (f"[{self.status}] {self.key}. {self.name}: {self.summary} "
                f"({self.runtime:.1f}s of {self.budget:.0f}s)")


class Context:
    """Shared ensembles and settings for one validation run."""

    def __init__(self, scale: Scale = FULL, base_seed: int = 2024, threads: int = 1,
                 mutate_sigma2: bool = False):
        self.scale = scale
        self.base_seed = base_seed
        self.threads = threads
        self.mutate_sigma2 = mutate_sigma2
        self._ensembles: dict[tuple[float, int], Ensemble] = {}
        self.sampling_time = 0.0

    def ensemble(self, alpha: float, rows: int | None = None) -> Ensemble:
        rows = self.scale.rows if rows is None else rows
        key = (alpha, rows)
        if key not in self._ensembles:
            t0 = time.perf_counter()
            shards = self.scale.shards
            ens = generate_ensemble(alpha, shards, rows // shards, self.base_seed,
                                    threads=self.threads)
            if self.mutate_sigma2:
                # sign error in the projection: t + explained instead of t - explained
                ens = ens.with_sigma2(2.0 * ens.tau - ens.sigma2)
            self._ensembles[key] = ens
            self.sampling_time += time.perf_counter() - t0
        return self._ensembles[key]


# -- independent oracles --------------------------------------------------------

def discretized_bm_oracle(intervals, u, t: float, mesh: float = 1e-3) -> tuple[float, float]:
    """``(sigma2_t, phi)`` from a Brownian motion discretised on a fine mesh.

    The path is a vector ``w`` of independent cell increments; the observation
    of interval ``i`` is ``u_i <a_i, w> + Z_i`` with ``a_i`` the cell overlaps.
    ``sigma2_t`` is the least-squares residual of the target functional against
    the span of the observations in the joint ``(w, Z)`` space, and ``phi`` is
    ``det(G G^T)^{-3/2}`` of the observation matrix ``G``.  The uniform mesh is
    refined by the interval endpoints and ``t`` so that every cell lies either
    inside or outside each interval.
    """
    s = np.array([iv[0] for iv in intervals], dtype=float)
    e = np.array([iv[1] for iv in intervals], dtype=float)
    u = np.asarray(u, dtype=float)
    end = max(float(e.max(initial=0.0)), t)
    cells = max(1, int(math.ceil(end / mesh)))
    edges = np.unique(np.concatenate([np.linspace(0.0, cells * mesh, cells + 1), s, e, [t]]))
    lo, hi = edges[:-1], edges[1:]
    dt = hi - lo
    cells = dt.size

    def row(a, b):
        return np.maximum(0.0, np.minimum(hi, b) - np.maximum(lo, a)) / np.sqrt(dt)

    n = s.size
    A = np.array([row(a, b) for a, b in zip(s, e)]).reshape(n, cells)
    G = np.hstack([u[:, None] * A, np.eye(n)])
    target = np.concatenate([row(0.0, t), np.zeros(n)])
    if n == 0:
        return float(target @ target), 1.0
    coef, *_ = np.linalg.lstsq(G.T, target, rcond=None)
    resid = target - G.T @ coef
    _, logdet = np.linalg.slogdet(G @ G.T)
    return float(resid @ resid), math.exp(-1.5 * logdet)


def mixture_ratio(rng: np.random.Generator, intervals, u, t: float, draws: int) -> tuple[float, float]:
    """Weighted Monte Carlo ``E[|X_t|^2 w] / E[w]`` with ``w = exp(-sum u_i^2 |X_i|^2 / 2)``."""
    s = np.array([iv[0] for iv in intervals], dtype=float)
    e = np.array([iv[1] for iv in intervals], dtype=float)
    pts = np.unique(np.concatenate([[0.0, t], s, e]))
    dt = np.diff(pts)
    inc = rng.standard_normal((draws, dt.size, 3)) * np.sqrt(dt)[None, :, None]
    path = np.concatenate([np.zeros((draws, 1, 3)), np.cumsum(inc, axis=1)], axis=1)
    idx = lambda x: np.searchsorted(pts, x)  # noqa: E731
    X = path[:, idx(e), :] - path[:, idx(s), :]
    xt2 = (path[:, idx(t), :] ** 2).sum(axis=1)
    logw = -0.5 * ((np.asarray(u)[None, :] ** 2) * (X ** 2).sum(axis=2)).sum(axis=1)
    w = np.exp(logw - logw.max())
    ratio = float((w * xt2).sum() / w.sum())
    # delta method for a ratio of means
    resid = w * (xt2 - ratio)
    se = float(resid.std(ddof=1) / (w.mean() * math.sqrt(draws)))
    return ratio, se


def _random_instance(rng: np.random.Generator, n_max: int = 3, span: float = 2.0):
    n = int(rng.integers(1, n_max + 1))
    intervals = []
    for _ in range(n):
        a, b = np.sort(rng.uniform(0.0, span, 2))
        intervals.append((float(a), float(b)))
    u = rng.uniform(0.2, 2.0, n)
    t = float(rng.uniform(0.2, span))
    return intervals, u, t


# -- checks ---------------------------------------------------------------------

def _timed(key, name, budget, fn: Callable[[], tuple[bool, str, dict]]):
    t0 = time.perf_counter()
    ok, summary, values = fn()
    runtime = time.perf_counter() - t0
    return CheckResult(key, name, bool(ok) and runtime <= budget, summary, runtime, budget, values)


def check_geometry(ctx: Context) -> CheckResult:
    def run():
        hand = [
            (geometry.sigma_squared_t([(1, 2)], [1.0], 2.0), 1.5),
            (geometry.sigma_squared_t([(0, 1), (0, 1)], [1.0, 1.0], 1.0), 1.0 / 3.0),
            (geometry.sigma_squared_t([(1, 2)], [0.0], 2.0), 2.0),
            (geometry.phi([(0, 1)], [1.0]), 2.0 ** -1.5),
            (geometry.phi([(0, 1), (0, 1)], [1.0, 1.0]), 3.0 ** -1.5),
        ]
        hand_err = max(abs(a - b) for a, b in hand)
        rng = np.random.default_rng(ctx.base_seed)
        worst = 0.0
        for _ in range(ctx.scale.geometry_instances):
            intervals, u, t = _random_instance(rng)
            s2, ph = discretized_bm_oracle(intervals, u, t)
            worst = max(worst, abs(geometry.sigma_squared_t(intervals, u, t) / s2 - 1),
                        abs(geometry.phi(intervals, u) / ph - 1))
        ok = hand_err <= 1e-12 and worst <= 1e-3
        return ok, f"hand max err {hand_err:.1e} (tol 1e-12), oracle max rel err {worst:.2e} (tol 1e-3)", \
            {"hand_err": hand_err, "oracle_rel_err": worst}
    return _timed(1, "closed-form geometry", 60, run)


def check_mixture(ctx: Context) -> CheckResult:
    def run():
        rng = np.random.default_rng(ctx.base_seed + 1)
        worst = 0.0
        for _ in range(ctx.scale.mixture_instances):
            intervals, u, t = _random_instance(rng)
            ratio, se = mixture_ratio(rng, intervals, u, t, ctx.scale.mixture_draws)
            target = 3.0 * geometry.sigma_squared_t(intervals, u, t)
            worst = max(worst, abs(ratio - target) / se)
        return worst <= 4.0, f"max |ratio - 3 sigma2| = {worst:.2f} stderr (tol 4)", {"max_z": worst}
    return _timed(2, "Gaussian-mixture identity", 300, run)


def check_pathwise(ctx: Context) -> CheckResult:
    ens = ctx.ensemble(1.0)  # sampled outside the timed region

    def run():
        p2 = np.linspace(0.0, 2.25, 20)
        lam = np.linspace(-3.0, -0.5, 20)
        grid = spectral.log_lambda_grid(ens, p2, lam)
        d_lam = float(np.diff(grid, axis=1).min())
        d_p2 = float(np.diff(grid, axis=0).max())
        viol = spectral.log_convexity_violation(grid)
        ok = d_lam > 0 and d_p2 < 0 and viol <= 1e-12
        return ok, (f"min dlogL/dlam step {d_lam:.3e} > 0, max dlogL/dP2 step {d_p2:.3e} < 0, "
                    f"log-convexity violation {viol:.1e} (tol 1e-12)"), \
            {"min_step_lambda": d_lam, "max_step_p2": d_p2, "convexity_violation": viol}
    return _timed(3, "pathwise structure of Lambda", 60, run)


def _quiet_nu(ens, P, h, T_max):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return renewal.empirical_nu(ens, P, h, T_max)


def check_oracle(ctx: Context, alphas=(0.3, 1.0), Ps=(0.0, 0.7), Ts=(1.0, 2.0)) -> CheckResult:
    def run():
        rows = []
        ok = True
        h = 0.01
        T_max = max(Ts)
        # the alpha -> 0 limit: no births, f is the free propagator
        K = int(round(T_max / h))
        empty = renewal.EmpiricalNu(h, np.zeros(K + 1), 0.0, 0.0)
        free_err = 0.0
        for P in Ps:
            f = renewal.solve_renewal(empty, P)
            for T in Ts:
                free_err = max(free_err, abs(f.at(T) - math.exp(-0.5 * P * P * T)))
        rng = np.random.default_rng(ctx.base_seed + 4)
        S0, x0, _ = fk_oracle.simulate_action(rng, 1.0, 2, 2)
        free_fk = fk_oracle.estimate_from_action(S0, x0, 0.0, 0.0).value
        ok = free_err <= 1e-12 and free_fk == 1.0
        for T in Ts:
            S, xT, _ = fk_oracle.simulate_action(rng, T, ctx.scale.fk_steps, ctx.scale.fk_paths)
            for alpha in alphas:
                ens = ctx.ensemble(alpha)
                for P in Ps:
                    fk = fk_oracle.estimate_from_action(S, xT, alpha, P)
                    f = renewal.solve_renewal(_quiet_nu(ens, P, h, T_max)).at(T)
                    f_se = float(renewal.renewal_stderr(ens, P, h, T_max)[int(round(T / h))])
                    rel = abs(fk.value - f) / abs(f)
                    agree = rel < 0.05 or abs(fk.value - f) <= 2 * (fk.stderr + f_se)
                    ok = ok and agree
                    rows.append({"alpha": alpha, "P": P, "T": T, "fk_value": fk.value,
                                 "fk_stderr": fk.stderr, "renewal_value": f,
                                 "renewal_stderr": f_se, "rel_diff": rel})
        worst = max(r["rel_diff"] for r in rows)
        return ok, (f"max rel diff {worst:.2%} over {len(rows)} points (tol 5% or 2-stderr overlap); "
                    f"alpha=0 limit err {free_err:.1e}"), {"rows": rows, "free_err": free_err}
    return _timed(4, "Feynman-Kac oracle agreement", 600, run)


def resolvent_crosscheck(ens: Ensemble, P: float, lam: float, E0, h: float = 0.01,
                         T_max: float = 10.0) -> dict:
    nu = _quiet_nu(ens, P, h, T_max)
    sol = renewal.solve_renewal(nu)
    ed = renewal.discrete_energy(nu)
    lap = renewal.laplace(sol, lam, ed, renewal.plateau(sol, ed).value)
    formula = spectral.resolvent(ens, P, lam, E0)
    return {"P": P, "lambda": lam, "resolvent_renewal": lap, "resolvent_formula": formula,
            "rel_diff": abs(lap - formula) / abs(formula)}


def check_resolvent(ctx: Context) -> CheckResult:
    def run():
        ens = ctx.ensemble(1.0)
        E0 = spectral.solve_E0(ens, jackknife=False)
        rows = []
        for P in (0.0, 0.5):
            EP = spectral.solve_EP(ens, P, E0, jackknife=False)
            rows.append(resolvent_crosscheck(ens, P, EP.energy - 0.5, E0))
        worst = max(r["rel_diff"] for r in rows)
        return worst < 0.03, f"max rel diff {worst:.2%} (tol 3%)", {"rows": rows}
    return _timed(5, "resolvent identity", 120, run)


def check_weak_coupling(ctx: Context, alpha: float = 0.1) -> CheckResult:
    def run():
        ens = ctx.ensemble(alpha)
        E0 = spectral.solve_E0(ens)
        m = spectral.effective_mass(ens, E0)
        e_ref = fk_oracle.perturbative_E0(alpha)
        m_ref = fk_oracle.perturbative_meff(alpha)
        e_rel = abs(E0.energy - e_ref) / abs(e_ref)
        m_z = abs(m.value - m_ref) / m.stderr if m.stderr > 0 else math.inf
        ok = e_rel <= 0.10 and m_z <= 2.0
        return ok, (f"E0 {E0.energy:.5f} vs {e_ref:.5f} ({e_rel:.1%}, tol 10%); "
                    f"m_eff {m.value:.5f}+-{m.stderr:.5f} vs {m_ref:.5f} ({m_z:.1f} stderr, tol 2)"), \
            {"E0": E0.energy, "E0_stderr": E0.stderr, "E0_ref": e_ref, "meff": m.value,
             "meff_stderr": m.stderr, "meff_ref": m_ref, "meff_z": m_z}
    return _timed(6, "weak-coupling anchors", 300, run)


def check_structure(ctx: Context) -> CheckResult:
    def run():
        ens = ctx.ensemble(1.0)
        curve = spectral.energy_curve(ens, np.linspace(0.0, 1.5, 7))
        d = curve.diagnostics
        E0, m = curve.E0, curve.m_eff
        mass_ok = m.value - 1.0 > 5.0 * m.stderr
        ok = E0.energy < 0 and d.monotone and d.concave and d.quasi_particle_bound and mass_ok
        return ok, (f"E0 {E0.energy:.4f}; monotone {d.monotone}; concave {d.concave}; "
                    f"quasi-particle bound {d.quasi_particle_bound}; m_eff {m.value:.4f}+-{m.stderr:.4f}"), \
            {"E0": E0.energy, "points": [(p.P, p.energy, p.kind, p.stderr) for p in curve.points],
             "meff": m.value, "meff_stderr": m.stderr}
    return _timed(7, "energy-curve structure", 600, run)


def check_overlap_plateau(ctx: Context) -> CheckResult:
    def run():
        ens = ctx.ensemble(1.0)
        E0 = spectral.solve_E0(ens, jackknife=False)
        ov = spectral.overlap(ens, 0.0, spectral.solve_EP(ens, 0.0, E0, jackknife=False))
        nu = _quiet_nu(ens, 0.0, 0.01, 10.0)
        sol = renewal.solve_renewal(nu)
        fit = renewal.plateau(sol, renewal.discrete_energy(nu))
        rel = abs(fit.value - ov) / ov
        return rel < 0.05, f"overlap {ov:.4f} vs plateau {fit.value:.4f} ({rel:.2%}, tol 5%)", \
            {"overlap": ov, "plateau": fit.value, "rel_diff": rel}
    return _timed(8, "overlap / plateau consistency", 120, run)


def check_persistence(ctx: Context) -> CheckResult:
    def run():
        a = generate_ensemble(1.0, 4, 2_500, ctx.base_seed)
        b = generate_ensemble(1.0, 4, 2_500, ctx.base_seed, threads=2)
        identical = dumps_ensemble(a) == dumps_ensemble(b)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ens.dat"
            save_ensemble(a, path)
            roundtrip = load_ensemble(path) == a
        c = generate_ensemble(1.0, 2, 3_000, ctx.base_seed + 1)
        merged = merge_ensembles(a, c)
        worst = 0.0
        for P, lam in ((0.0, -1.0), (0.7, -0.5), (1.2, 0.2)):
            direct = float(logsumexp(merged.logw - 0.5 * P * P * merged.sigma2 + lam * merged.tau))
            parts = [float(logsumexp(e.logw - 0.5 * P * P * e.sigma2 + lam * e.tau)) for e in (a, c)]
            pooled = float(logsumexp(parts))
            worst = max(worst, abs(math.expm1(direct - pooled)))
        ok = identical and roundtrip and worst <= 1e-12
        return ok, (f"byte-identical {identical}; round-trip {roundtrip}; "
                    f"merge identity err {worst:.1e} (tol 1e-12)"), \
            {"identical": identical, "roundtrip": roundtrip, "merge_err": worst}
    return _timed(9, "determinism and persistence", 60, run)


def probe_report(ctx: Context, Ps=(0.0, 0.5, 1.0, 1.5)) -> list[spectral.I0Probe]:
    ens = ctx.ensemble(1.0)
    E0 = spectral.solve_E0(ens, jackknife=False)
    return [spectral.i0_probe(ens, P, E0) for P in Ps]


CHECKS = {
    1: check_geometry,
    2: check_mixture,
    3: check_pathwise,
    4: check_oracle,
    5: check_resolvent,
    6: check_weak_coupling,
    7: check_structure,
    8: check_overlap_plateau,
    9: check_persistence,
}


def run_checks(ctx: Context, keys=None, out: io.TextIOBase | None = None) -> list[CheckResult]:
    results = []
    for key in (sorted(CHECKS) if keys is None else keys):
        res = CHECKS[key](ctx)
        results.append(res)
        if out is not None:
            print(res.line(), file=out, flush=True)
    return results


__all__ = ["Scale", "FULL", "QUICK", "SCALES", "CheckResult", "Context", "CHECKS", "run_checks",
           "discretized_bm_oracle", "mixture_ratio", "resolvent_crosscheck", "probe_report"]
