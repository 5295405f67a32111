"""Command-line front end.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or configuration
error.  Every table written embeds the resolved configuration as ``#`` comments.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import fk_oracle, renewal, spectral, validation
from .config import RunConfig
from .ensemble import generate_ensemble, load_ensemble, save_ensemble
from .errors import InvalidParameterError, PolaronError

log = logging.getLogger("polaron_renewal")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
ESS_WARN = 100.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- output ---------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_table(dest, columns: list[str], rows: list[dict], config: RunConfig,
                command: str, fmt: str | None = None) -> None:
    """CSV or JSONL with the resolved config as leading comment lines."""
    fmt = fmt or config.format
    lines = [f"# command = {command}"] + [f"# {k} = {v}" for k, v in config.items()]
    if fmt == "csv":
        lines.append(",".join(columns))
        lines += [",".join(_cell(r.get(c)) for c in columns) for r in rows]
    else:
        lines += [json.dumps({c: _json_value(r.get(c)) for c in columns}) for r in rows]
    text = "\n".join(lines) + "\n"
    if dest is None or str(dest) == "-":
        sys.stdout.write(text)
    else:
        Path(dest).parent.mkdir(parents=True, exist_ok=True)
        Path(dest).write_text(text)


def _dest(args, config: RunConfig, default_name: str | None):
    if getattr(args, "out", None):
        return args.out
    if default_name is None or config.output_dir in ("", "-"):
        return None
    if args.config is None and config.output_dir == ".":
        return None
    return Path(config.output_dir) / f"{default_name}.{config.format}"


# -- configuration ----------------------------------------------------------------

_FLAG_TO_FIELD = {
    "alpha": "alpha", "seed": "base_seed", "shards": "shards", "per_shard": "samples_per_shard",
    "P": "P_grid", "h": "h", "T_max": "T_max", "tol": "tol", "steps": "fk_steps",
    "paths": "fk_paths", "T": "T_grid", "lam_min": "lambda_min", "lam_max": "lambda_max",
    "n_lam": "n_lambda", "threads": "threads", "format": "format", "output_dir": "output_dir",
    "max_n": "max_n", "max_tau": "max_tau",
}


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for flag, name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = tuple(value) if isinstance(value, list) else value
    return dataclasses.replace(base, **overrides)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args, config: RunConfig):
    if not args.ensemble:
        raise UsageError("--ensemble is required")
    # only insist on a matching coupling if the user named one
    return load_ensemble(args.ensemble, alpha=config.alpha if args.alpha is not None else None)


# -- commands ---------------------------------------------------------------------

def cmd_sample(args, config: RunConfig) -> int:
    if not args.out:
        raise UsageError("sample needs --out")
    ens = generate_ensemble(config.alpha, config.shards, config.samples_per_shard, config.base_seed,
                            threads=config.resolved_threads, max_n=config.max_n,
                            max_tau=config.max_tau)
    save_ensemble(ens, args.out)
    print(f"wrote {len(ens)} rows to {args.out}")
    print(f"mean tau {ens.tau.mean():.6g}  mean n {ens.n.mean():.6g}  max n {int(ens.n.max())}  "
          f"cap breaches 0")
    return EXIT_OK


def _warn_ess(P: float, ess: float):
    if ess < ESS_WARN:
        log.warning("effective sample size %.1f < %g at P=%g; the root is noise-dominated",
                    ess, ESS_WARN, P)


def cmd_energy(args, config: RunConfig) -> int:
    ens = _load(args, config)
    curve = spectral.energy_curve(ens, config.P_grid, config.tol)
    rows = []
    for p in curve.points:
        if not p.is_plateau:
            _warn_ess(p.P, p.diagnostics.ess)
        rows.append({"P": p.P, "energy": p.energy, "kind": p.kind, "stderr": p.stderr,
                     "ess": p.diagnostics.ess, "max_share": p.diagnostics.max_share})
    write_table(_dest(args, config, "energy"), ["P", "energy", "kind", "stderr", "ess", "max_share"],
                rows, config, "energy")
    summary = [{"alpha": ens.meta.alpha, "E0": curve.E0.energy, "meff": curve.m_eff.value,
                "meff_stderr": curve.m_eff.stderr}]
    if args.summary:
        write_table(args.summary, ["alpha", "E0", "meff", "meff_stderr"], summary, config, "energy")
    d = curve.diagnostics
    print(f"# E0 = {curve.E0.energy:.10g} +- {curve.E0.stderr:.3g}; m_eff = {curve.m_eff.value:.8g} "
          f"+- {curve.m_eff.stderr:.3g}; monotone={d.monotone} concave={d.concave} "
          f"bound={d.quasi_particle_bound}", file=sys.stderr)
    return EXIT_OK


def cmd_lambda(args, config: RunConfig) -> int:
    ens = _load(args, config)
    rows = []
    for P in config.P_grid:
        for lam in config.lambda_grid():
            est = spectral.lambda_hat(ens, P, lam)
            rows.append({"P": P, "lambda": lam, "Lambda": est.value, "stderr": est.stderr,
                         "ess": est.ess, "max_share": est.max_share})
    write_table(_dest(args, config, "lambda"), ["P", "lambda", "Lambda", "stderr", "ess", "max_share"],
                rows, config, "lambda")
    return EXIT_OK


def cmd_resolvent(args, config: RunConfig) -> int:
    ens = _load(args, config)
    E0 = spectral.solve_E0(ens, config.tol, jackknife=False)
    rows = []
    for P in config.P_grid:
        if args.lam is not None:
            lams = args.lam
        else:
            lams = [spectral.solve_EP(ens, P, E0, config.tol, jackknife=False).energy - 0.5]
        for lam in lams:
            rows.append(validation.resolvent_crosscheck(ens, P, lam, E0, config.h, config.T_max))
    write_table(_dest(args, config, "resolvent"),
                ["P", "lambda", "resolvent_renewal", "resolvent_formula", "rel_diff"],
                rows, config, "resolvent")
    return EXIT_OK


def cmd_overlap(args, config: RunConfig) -> int:
    ens = _load(args, config)
    E0 = spectral.solve_E0(ens, config.tol, jackknife=False)
    rows = []
    for P in config.P_grid:
        pt = spectral.solve_EP(ens, P, E0, config.tol, jackknife=False)
        value = None if pt.is_plateau else spectral.overlap(ens, P, pt)
        rows.append({"P": P, "energy": pt.energy, "kind": pt.kind, "overlap": value})
    write_table(_dest(args, config, "overlap"), ["P", "energy", "kind", "overlap"], rows, config,
                "overlap")
    return EXIT_OK


def cmd_renewal(args, config: RunConfig) -> int:
    ens = _load(args, config)
    P = config.P_grid[0] if config.P_grid else 0.0
    nu = renewal.empirical_nu(ens, P, config.h, config.T_max)
    sol = renewal.solve_renewal(nu)
    rows = [{"T": float(t), "f": float(f)} for t, f in zip(sol.times, sol.values)]
    write_table(_dest(args, config, "renewal"), ["T", "f"], rows, config, f"renewal P={P!r}")
    return EXIT_OK


def cmd_oracle(args, config: RunConfig) -> int:
    ens = load_ensemble(args.ensemble, alpha=config.alpha) if args.ensemble else None
    shards = args.fk_shards
    rows = []
    for T in config.T_grid:
        S, xT = fk_oracle.sharded_action(T, config.fk_steps, config.fk_paths, config.base_seed,
                                         shards, config.resolved_threads)
        for P in config.P_grid:
            fk = fk_oracle.estimate_from_action(S, xT, config.alpha, P)
            f = rel = None
            if ens is not None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    nu = renewal.empirical_nu(ens, P, config.h, max(T, config.h))
                f = renewal.solve_renewal(nu).values[-1]
                rel = abs(fk.value - f) / abs(f)
            rows.append({"alpha": config.alpha, "P": P, "T": T, "fk_value": fk.value,
                         "fk_stderr": fk.stderr, "renewal_value": f, "rel_diff": rel})
    write_table(_dest(args, config, "oracle"),
                ["alpha", "P", "T", "fk_value", "fk_stderr", "renewal_value", "rel_diff"],
                rows, config, "oracle")
    return EXIT_OK


def cmd_probe(args, config: RunConfig) -> int:
    ens = _load(args, config)
    E0 = spectral.solve_E0(ens, config.tol, jackknife=False)
    rows = [dataclasses.asdict(spectral.i0_probe(ens, P, E0)) for P in config.P_grid]
    write_table(_dest(args, config, "probe"),
                ["P", "estimate", "log_estimate", "ess", "max_share", "tail_index", "verdict"],
                rows, config, "probe")
    return EXIT_OK


def cmd_validate(args, config: RunConfig) -> int:
    keys = sorted(validation.CHECKS) if args.checks is None else [int(k) for k in args.checks]
    unknown = [k for k in keys if k not in validation.CHECKS]
    if unknown:
        raise UsageError(f"unknown check(s) {unknown}; choose from {sorted(validation.CHECKS)}")
    ctx = validation.Context(validation.SCALES[args.scale], base_seed=config.base_seed,
                             threads=config.resolved_threads, mutate_sigma2=args.mutate_sigma2)
    results = validation.run_checks(ctx, keys, out=sys.stderr)
    rows = [{"check": r.key, "name": r.name, "status": r.status, "runtime_s": r.runtime,
             "budget_s": r.budget, "summary": r.summary} for r in results]
    write_table(_dest(args, config, "validate"),
                ["check", "name", "status", "runtime_s", "budget_s", "summary"],
                [dict(r, summary=r["summary"].replace(",", ";")) for r in rows], config, "validate")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {
    "sample": cmd_sample, "energy": cmd_energy, "validate": cmd_validate, "lambda": cmd_lambda,
    "resolvent": cmd_resolvent, "overlap": cmd_overlap, "renewal": cmd_renewal,
    "oracle": cmd_oracle, "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--out", help="output path ('-' for stdout)")
    common.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    common.add_argument("--format", choices=("csv", "jsonl"))
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--alpha", type=float, help="coupling constant (> 0)")
    common.add_argument("--seed", type=int)
    common.add_argument("--ensemble", help="ensemble file written by 'sample'")
    common.add_argument("--P", type=_float_list, help="comma-separated momenta")
    common.add_argument("--tol", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="polaron-renewal", description="Renewal Monte Carlo for E(P).")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", parents=[common], help="generate an ensemble file")
    p.add_argument("--shards", type=int)
    p.add_argument("--per-shard", dest="per_shard", type=int)
    p.add_argument("--max-n", dest="max_n", type=int)
    p.add_argument("--max-tau", dest="max_tau", type=float)

    p = sub.add_parser("energy", parents=[common], help="E0, energy curve and effective mass")
    p.add_argument("--summary", help="path for the alpha,E0,meff,meff_stderr table")

    p = sub.add_parser("validate", parents=[common], help="run the cross-check suite")
    p.add_argument("--scale", choices=sorted(validation.SCALES), default="full")
    p.add_argument("--checks", type=lambda s: s.split(","), help="comma-separated check numbers")
    p.add_argument("--mutate-sigma2", dest="mutate_sigma2", action="store_true",
                   help=argparse.SUPPRESS)

    p = sub.add_parser("lambda", parents=[common], help="Lambda(P, lambda) on a grid")
    for q in (p,):
        q.add_argument("--lam-min", dest="lam_min", type=float)
        q.add_argument("--lam-max", dest="lam_max", type=float)
        q.add_argument("--n-lam", dest="n_lam", type=int)

    p = sub.add_parser("resolvent", parents=[common], help="renewal vs closed-form resolvent")
    p.add_argument("--lam", type=_float_list, help="spectral parameters (default E(P) - 0.5)")
    p.add_argument("--h", type=float)
    p.add_argument("--T-max", dest="T_max", type=float)

    sub.add_parser("overlap", parents=[common], help="vacuum overlap at E(P)")

    p = sub.add_parser("renewal", parents=[common], help="f_P(T) on a grid (first P only)")
    p.add_argument("--h", type=float)
    p.add_argument("--T-max", dest="T_max", type=float)

    p = sub.add_parser("oracle", parents=[common], help="path-integral Monte Carlo f_P(T)")
    p.add_argument("--T", type=_float_list, help="comma-separated horizons")
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--fk-shards", dest="fk_shards", type=int, default=1)

    sub.add_parser("probe", parents=[common], help="tail diagnostics at the essential edge")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except (UsageError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PolaronError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
