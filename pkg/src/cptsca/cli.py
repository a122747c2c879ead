"""Command-line entry point: ``python -m cptsca <command> --config FILE``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .errors import (
    BadSpec,
    ConfigError,
    CptScaError,
    DimensionMismatch,
    InfeasibleStart,
    WrongDimension,
)

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_INVARIANT = 0, 1, 2, 3


def _parser():
    ap = argparse.ArgumentParser(
        prog="cptsca",
        description="Budget allocation for prospect-theoretic agents by successive convex approximation.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "solve one instance and write its trace",
        "batch": "compare SCA against the multi-start baseline over many random instances",
        "trace-contour": "trajectory plus objective grid on the budget slice (3 agents)",
        "verify-surrogates": "audit the surrogate construction rules on random parameter sets",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (default: ./out/<command>)")
        p.add_argument("--workers", type=int, default=1, help="worker processes for batch runs")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed (batch: base seed; audit: sampler seed)")
    return ap


def _apply_seed(cfg, command, seed):
    if seed is None:
        return cfg
    if not 0 <= seed < 2**64:
        raise ConfigError("--seed must be a 64-bit unsigned integer")
    if command == "batch":
        return replace(cfg, batch=replace(cfg.batch, base_seed=seed))
    if command == "verify-surrogates":
        return replace(cfg, verify=replace(cfg.verify, seed=seed))
    return replace(cfg, scenario=replace(cfg.scenario, seed=seed))


def cmd_solve(cfg, out: Path):
    problem = cfg.problem()
    from .sca import sca_solve
    result = sca_solve(problem, cfg.x_init, cfg.solver)
    bench.write_solve_outputs(out, problem, result,
                              bench.metadata_sidecar(cfg, seed=cfg.scenario.seed))
    print(f"status={result.status} f={result.f!r} k={result.k!r} iterations={result.iterations}")
    return EXIT_OK if result.converged else EXIT_BUDGET


def cmd_batch(cfg, out: Path, workers: int):
    total = len(bench.batch_tasks(cfg))

    def progress(i, n):
        if i % 50 == 0 or i == n:
            print(f"  {i}/{n} instances", file=sys.stderr, flush=True)

    rows, timings = bench.run_batch(cfg, workers=workers, progress=progress)
    aggs = bench.write_batch_outputs(out, rows, timings, cfg)
    print(f"{total} instances; baseline: internal multi-start projected gradient")
    for a in aggs:
        print("  N={n_agents}: better@0%={pct_better_tol0:.1f} better@2%={pct_better_tol2:.1f} "
              "mean={mean_rel_pct:.3f} trim1={trimmed_mean_1pct:.3f} trim2={trimmed_mean_2pct:.3f} "
              "trim5={trimmed_mean_5pct:.3f} failed={failed}".format(**a))
    return EXIT_OK


def cmd_trace_contour(cfg, out: Path):
    problem = cfg.problem()
    result, traj, grid = bench.trace_contour(problem, cfg)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_csv(out / "trajectory.csv", ["iter", "P1", "P2", "P3", "f"], traj)
    bench.write_csv(out / "contour.csv", ["P1", "P2", "P3", "f"], grid.tolist())
    bench.write_json(out / "meta.json", bench.metadata_sidecar(
        cfg, seed=cfg.scenario.seed, status=result.status, f_initial=traj[0][-1],
        f_final=traj[-1][-1]))
    print(f"trajectory rows={len(traj)} grid rows={len(grid)} "
          f"f: {traj[0][-1]!r} -> {traj[-1][-1]!r} ({result.status})")
    return EXIT_OK


def cmd_verify(cfg, out: Path):
    summary = bench.verify_surrogates(cfg.verify, cfg.solver.surrogate)
    out.mkdir(parents=True, exist_ok=True)
    header = list(summary[0])
    bench.write_csv(out / "surrogate_audit.csv", header, [[r[h] for h in header] for r in summary])
    for r in summary:
        print("  {case}: n={samples} minorization>={worst_minorization:.3e} "
              "grad_err<={worst_gradient:.3e} second_diff<={worst_second_diff:.3e} "
              "rule6<={worst_rule6:.3e} strongly_concave={pass_strong_concavity}/{samples}".format(**r))
    ok = bench.surrogate_audit_ok(summary)
    print("all soundness rules hold" if ok else "RULE VIOLATIONS FOUND")
    return EXIT_OK if ok else EXIT_INVARIANT


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    out = Path(args.out) if args.out else Path("out") / args.command
    try:
        cfg = _apply_seed(bench.load_config(args.config), args.command, args.seed)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "batch":
            return cmd_batch(cfg, out, args.workers)
        if args.command == "trace-contour":
            return cmd_trace_contour(cfg, out)
        return cmd_verify(cfg, out)
    except (ConfigError, BadSpec, WrongDimension, DimensionMismatch, InfeasibleStart) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CptScaError as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    np.seterr(all="ignore")
    sys.exit(main())
