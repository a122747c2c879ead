"""Run configuration, batch comparison reports and output writers used by the CLI."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from .baseline import OracleConfig, multistart_local
from .dual import DualConfig
from .errors import ConfigError, CptScaError, WrongDimension
from .scenario import (
    AllocationProblem,
    ScenarioSpec,
    generate_scenario,
    load_problem,
    objective,
    objective_batch,
)
from .schedules import schedule_from_dict, schedule_to_dict
from .sca import ScaConfig, SolveResult, SolverConfig, sca_solve
from .surrogate import SurrogateConfig
from .utility import Side

TRIM_LEVELS = (0.01, 0.02, 0.05)
TOLERANCES = (0.0, 2.0)


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class BatchSpec:
    n_agents: tuple = (10, 30, 50)
    instances: int = 500
    base_seed: int = 0
    sampler: str = "s-shaped"
    mean_snr_db: float = 7.0
    p_total: float = 1.0


@dataclass(frozen=True)
class VerifySpec:
    samples: int = 1000
    seed: int = 0
    grid_points: int = 200


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation can be told, with defaults for every key."""

    scenario: ScenarioSpec = field(default_factory=lambda: ScenarioSpec(3))
    instance: Optional[str] = None
    x_init: Optional[tuple] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    contour_resolution: int = 61

    def problem(self) -> AllocationProblem:
        if self.instance is not None:
            return load_problem(self.instance)
        return generate_scenario(self.scenario)


def _strict(cls, d, section, convert=None):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    kw = dict(d)
    for key, fn in (convert or {}).items():
        if key in kw and kw[key] is not None:
            kw[key] = fn(kw[key])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in '{section}': {exc}") from exc


def config_from_dict(d: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Build a :class:`RunConfig`, rejecting unknown keys anywhere."""
    top = {"scenario", "instance", "x_init", "sca", "dual", "surrogate", "oracle",
           "batch", "verify", "contour"}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")

    def sched(v):
        if not isinstance(v, dict):
            raise ConfigError("schedules are objects like {\"kind\": \"harmonic\", ...}")
        return schedule_from_dict(v)

    sca = _strict(ScaConfig, d.get("sca", {}), "sca", {"theta_schedule": sched})
    dual = _strict(DualConfig, d.get("dual", {}), "dual", {"zeta": sched, "eta": sched})
    sur = _strict(SurrogateConfig, d.get("surrogate", {}), "surrogate", {"kink_side": Side})
    scenario = _strict(ScenarioSpec, d.get("scenario", {"n_agents": 3}), "scenario")
    try:
        scenario.validate()
    except CptScaError as exc:
        raise ConfigError(str(exc)) from exc
    oracle = _strict(OracleConfig, d.get("oracle", {}), "oracle")
    batch = _strict(BatchSpec, d.get("batch", {}), "batch", {"n_agents": tuple})
    verify = _strict(VerifySpec, d.get("verify", {}), "verify")
    contour = d.get("contour", {})
    if not isinstance(contour, dict) or set(contour) - {"resolution"}:
        raise ConfigError("section 'contour' accepts only 'resolution'")
    resolution = int(contour.get("resolution", 61))
    if resolution < 2:
        raise ConfigError("contour resolution must be at least 2")

    instance = d.get("instance")
    if instance is not None and base_dir is not None and not Path(instance).is_absolute():
        instance = str(base_dir / instance)
    x_init = d.get("x_init")
    return RunConfig(
        scenario=scenario, instance=instance,
        x_init=None if x_init is None else tuple(float(v) for v in x_init),
        solver=SolverConfig(sca=sca, dual=dual, surrogate=sur), oracle=oracle,
        batch=batch, verify=verify, contour_resolution=resolution,
    )


def config_to_dict(cfg: RunConfig) -> dict:
    """Fully resolved, JSON-ready view of ``cfg`` (used for hashing and sidecars)."""
    s = cfg.solver
    sca = asdict(s.sca)
    sca["theta_schedule"] = schedule_to_dict(s.sca.theta_schedule)
    dual = asdict(s.dual)
    dual["zeta"], dual["eta"] = schedule_to_dict(s.dual.zeta), schedule_to_dict(s.dual.eta)
    sur = asdict(s.surrogate)
    sur["kink_side"] = s.surrogate.kink_side.value
    batch = asdict(cfg.batch)
    batch["n_agents"] = list(cfg.batch.n_agents)
    return {
        "scenario": asdict(cfg.scenario), "instance": cfg.instance,
        "x_init": None if cfg.x_init is None else list(cfg.x_init),
        "sca": sca, "dual": dual, "surrogate": sur, "oracle": asdict(cfg.oracle),
        "batch": batch, "verify": asdict(cfg.verify),
        "contour": {"resolution": cfg.contour_resolution},
    }


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw, path.parent)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def metadata_sidecar(cfg: RunConfig, **extra) -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    meta = {
        "config_hash": config_hash(cfg),
        "config": config_to_dict(cfg),
        "versions": {"package": version, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    meta.update(extra)
    return meta


# --- CSV helpers ------------------------------------------------------------

def fmt(v):
    """Shortest round-trip text for floats so reruns are byte-identical."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- single solve -----------------------------------------------------------

TRACE_HEADER = ["iter", "f", "f_surrogate", "theta", "inner_status", "touch_gap", "k"]


def trace_rows(result: SolveResult):
    n = result.P.size
    header = TRACE_HEADER + [f"P{i + 1}" for i in range(n)]
    rows = [[l, r.f, r.f_surr, r.theta, r.inner_status, r.touch_gap, r.k, *r.P]
            for l, r in enumerate(result.trace)]
    return header, rows


def write_solve_outputs(out: Path, problem: AllocationProblem, result: SolveResult, meta):
    out.mkdir(parents=True, exist_ok=True)
    header, rows = trace_rows(result)
    write_csv(out / "trace.csv", header, rows)
    write_csv(out / "result.csv", ["agent", "P", "snr"],
              [[i + 1, p, p * c] for i, (p, c) in enumerate(zip(result.P, problem.snr_scale))])
    write_csv(out / "summary.csv", ["f", "k", "status", "iterations", "budget_used"],
              [[result.f, result.k, result.status, result.iterations, float(np.sum(result.P))]])
    from .scenario import save_problem
    save_problem(problem, out / "instance.json")
    write_json(out / "meta.json", meta)


# --- batch ------------------------------------------------------------------

ROW_HEADER = ["n_agents", "seed", "f_sca", "f_baseline", "rel_improvement_pct",
              "sca_status", "sca_iterations", "error"]


def relative_improvement(f_sca, f_base):
    """Percent by which the SCA objective beats the baseline (positive = SCA lower)."""
    return (f_base - f_sca) / max(abs(f_base), 1e-12) * 100.0


def run_instance(task):
    """One batch row plus its wall times; never raises for solver failures."""
    n, seed, cfg = task
    spec = ScenarioSpec(n, cfg.batch.mean_snr_db, cfg.batch.p_total, cfg.batch.sampler, seed)
    problem = generate_scenario(spec)
    row = {"n_agents": n, "seed": seed, "f_sca": math.nan, "f_baseline": math.nan,
           "rel_improvement_pct": math.nan, "sca_status": "error", "sca_iterations": 0,
           "error": ""}
    times = {"n_agents": n, "seed": seed, "sca_seconds": math.nan, "baseline_seconds": math.nan}
    try:
        t = time.perf_counter()
        res = sca_solve(problem, cfg=cfg.solver)
        times["sca_seconds"] = time.perf_counter() - t
        row.update(f_sca=res.f, sca_status=res.status, sca_iterations=res.iterations)
    except CptScaError as exc:
        row["error"] = f"sca: {type(exc).__name__}"
    try:
        t = time.perf_counter()
        ocfg = replace(cfg.oracle, start_seed=cfg.oracle.start_seed + seed)
        _, fb, _ = multistart_local(problem, ocfg)
        times["baseline_seconds"] = time.perf_counter() - t
        row["f_baseline"] = fb
    except CptScaError as exc:
        row["error"] = (row["error"] + "; " if row["error"] else "") + f"baseline: {type(exc).__name__}"
    if math.isfinite(row["f_sca"]) and math.isfinite(row["f_baseline"]):
        row["rel_improvement_pct"] = relative_improvement(row["f_sca"], row["f_baseline"])
    return row, times


def batch_tasks(cfg: RunConfig):
    b = cfg.batch
    return [(int(n), b.base_seed + j, cfg) for n in b.n_agents for j in range(b.instances)]


def run_batch(cfg: RunConfig, workers: int = 1, progress=None):
    """Solve every batch instance with SCA and the baseline.

    Returns ``(rows, timings)`` sorted by ``(n_agents, seed)``.
    """
    tasks = batch_tasks(cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_instance, tasks, chunksize=4))
    else:
        results = []
        for i, t in enumerate(tasks):
            results.append(run_instance(t))
            if progress:
                progress(i + 1, len(tasks))
    results.sort(key=lambda rt: (rt[0]["n_agents"], rt[0]["seed"]))
    return [r for r, _ in results], [t for _, t in results]


def trimmed_mean(values, q):
    """Mean after dropping ``ceil(q * n)`` values from each end of the sorted sample."""
    v = sorted(values)
    cut = math.ceil(q * len(v) - 1e-12)
    kept = v[cut:len(v) - cut]
    return math.fsum(kept) / len(kept) if kept else math.nan


def aggregate(rows):
    """Summaries per population size and over all rows.

    ``pct_better_tol{t}`` is the share of instances whose relative improvement
    is at least ``-t`` percent, so results within ``t`` percent count as ties.
    """
    groups = {}
    for r in rows:
        groups.setdefault(r["n_agents"], []).append(r)
    out = []
    for key in sorted(groups) + ["all"]:
        grp = rows if key == "all" else groups[key]
        vals = [r["rel_improvement_pct"] for r in grp if math.isfinite(r["rel_improvement_pct"])]
        n = len(vals)
        rec = {"n_agents": key, "instances": len(grp), "valid": n, "failed": len(grp) - n}
        for tol in TOLERANCES:
            rec[f"pct_better_tol{tol:g}"] = (100.0 * sum(v >= -tol for v in vals) / n) if n else math.nan
        rec["mean_rel_pct"] = math.fsum(vals) / n if n else math.nan
        for q in TRIM_LEVELS:
            rec[f"trimmed_mean_{round(q * 100)}pct"] = trimmed_mean(vals, q)
        out.append(rec)
    return out


def trend(aggregates):
    """Mean relative improvement per population size, in increasing ``N``."""
    per_n = [(a["n_agents"], a["mean_rel_pct"]) for a in aggregates if a["n_agents"] != "all"]
    means = [m for _, m in per_n]
    diffs = np.diff(means) if len(means) > 1 else np.array([])
    if diffs.size and np.all(diffs > 0):
        label = "increasing"
    elif diffs.size and np.all(diffs < 0):
        label = "decreasing"
    else:
        label = "mixed"
    return {"mean_rel_pct_by_n": {str(n): m for n, m in per_n}, "direction": label}


def write_batch_outputs(out: Path, rows, timings, cfg: RunConfig):
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "rows.csv", ROW_HEADER, [[r[h] for h in ROW_HEADER] for r in rows])
    aggs = aggregate(rows)
    agg_header = list(aggs[0])
    write_csv(out / "aggregates.csv", agg_header, [[a[h] for h in agg_header] for a in aggs])
    t_header = ["n_agents", "seed", "sca_seconds", "baseline_seconds"]
    write_csv(out / "timings.csv", t_header, [[t[h] for h in t_header] for t in timings])
    write_json(out / "meta.json", metadata_sidecar(
        cfg, baseline="internal baseline (multi-start projected gradient)", trend=trend(aggs)))
    return aggs


def read_rows(path):
    """Parse ``rows.csv`` back into typed dicts (used to re-derive aggregates)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["n_agents"] = int(r["n_agents"])
        r["seed"] = int(r["seed"])
        r["sca_iterations"] = int(r["sca_iterations"])
        for k in ("f_sca", "f_baseline", "rel_improvement_pct"):
            r[k] = float(r[k])
    return rows


# --- contour slice for three agents -----------------------------------------

def contour_grid(problem: AllocationProblem, resolution: int):
    """Objective on ``P3 = P_total - P1 - P2`` over a ``resolution x resolution`` grid.

    Points with ``P3 < 0`` are infeasible and carry NaN.
    """
    if problem.size != 3:
        raise WrongDimension(f"contour slices need exactly 3 agents, got {problem.size}")
    b = problem.p_total
    axis = np.linspace(0.0, b, resolution)
    p1, p2 = np.meshgrid(axis, axis, indexing="ij")
    p1, p2 = p1.ravel(), p2.ravel()
    p3 = b - p1 - p2
    ok = p3 >= -1e-12 * b
    p3 = np.where(ok, np.maximum(p3, 0.0), np.nan)
    f = np.full(p1.size, np.nan)
    pts = np.column_stack([p1, p2, p3])[ok]
    f[ok] = objective_batch(problem, pts)
    return np.column_stack([p1, p2, p3, f])


def trace_contour(problem: AllocationProblem, cfg: RunConfig):
    if problem.size != 3:
        raise WrongDimension(f"trace-contour needs exactly 3 agents, got {problem.size}")
    result = sca_solve(problem, cfg.x_init, cfg.solver)
    traj = [[l, *r.P, objective(problem, r.P)] for l, r in enumerate(result.trace)]
    return result, traj, contour_grid(problem, cfg.contour_resolution)


# --- surrogate audit --------------------------------------------------------

SOUNDNESS_RULES = ("gradient_match", "slope_continuity", "minorization", "rule6", "concavity")


def verify_surrogates(spec: VerifySpec, surrogate_cfg: SurrogateConfig = SurrogateConfig()):
    """Run the rule checker on ``spec.samples`` random pairs spread evenly over the cases.

    Returns one summary dict per case. Strong concavity is reported but is not
    a soundness requirement (exponential pieces flatten far from the touch
    point unless the proximal term is on).
    """
    from .surrogate import Case, build_surrogate, sample_case_pair, verify_construction_rules

    rng = np.random.default_rng(spec.seed)
    cases = list(Case)
    summary = {c: {"case": c.name, "samples": 0, **{f"pass_{r}": 0 for r in
                                                     ("strong_concavity",) + SOUNDNESS_RULES},
                   "worst_minorization": math.inf, "worst_gradient": 0.0,
                   "worst_second_diff": -math.inf, "worst_rule6": 0.0}
               for c in cases}
    for i in range(spec.samples):
        case = cases[i % len(cases)]
        p, xe = sample_case_pair(rng, case)
        s = build_surrogate(p, xe, surrogate_cfg)
        grid = np.linspace(min(p.x0, xe) - 10.0 * p.n, max(p.x0, xe) + 10.0 * p.m, spec.grid_points)
        rep = verify_construction_rules(s, p, xe, grid, eps_curv=surrogate_cfg.eps_curv)
        rec = summary[case]
        rec["samples"] += 1
        for rule, ok in rep.passed.items():
            rec[f"pass_{rule}"] += bool(ok)
        rec["worst_minorization"] = min(rec["worst_minorization"], rep.minorization_margin)
        rec["worst_gradient"] = max(rec["worst_gradient"], rep.gradient_match_error)
        rec["worst_second_diff"] = max(rec["worst_second_diff"], rep.concavity_error)
        if rep.rule6_error is not None:
            rec["worst_rule6"] = max(rec["worst_rule6"], rep.rule6_error)
    return [summary[c] for c in cases]


def surrogate_audit_ok(summary):
    return all(rec[f"pass_{r}"] == rec["samples"] for rec in summary for r in SOUNDNESS_RULES)
