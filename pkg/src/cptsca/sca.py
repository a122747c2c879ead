"""Successive convex approximation driver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dual import DualConfig, DualResult, DualSubgradientSolver
from .errors import BudgetExhausted, CptScaError, InfeasibleStart, InnerSolverFailure
from .scenario import AllocationProblem, objective
from .schedules import Harmonic
from .surrogate import SurrogateConfig, build_surrogate, stack_surrogates

FEAS_SLACK = 1e-9
NEG_SLACK = 1e-12


@dataclass(frozen=True)
class ScaConfig:
    theta_schedule: object = field(default_factory=lambda: Harmonic(1.0, 0.1))
    max_outer_iters: int = 500
    x_tol: float = 1e-6
    f_tol: float = 1e-9
    monotone_mode: bool = False

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be positive")
        if self.x_tol <= 0 or self.f_tol <= 0:
            raise ValueError("tolerances must be positive")


def theta(cfg: ScaConfig, l: int) -> float:
    """Blend step at outer iteration ``l`` (always 1 in monotone mode)."""
    if l < 0:
        raise ValueError("iteration index must be nonnegative")
    if cfg.monotone_mode:
        return 1.0
    return float(cfg.theta_schedule(l))


@dataclass(frozen=True)
class SolverConfig:
    """Everything a full solve needs: outer loop, inner loop, surrogate builder."""

    sca: ScaConfig = field(default_factory=ScaConfig)
    dual: DualConfig = field(default_factory=DualConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)


@dataclass
class TraceRecord:
    P: np.ndarray
    f: float
    f_surr: float  # surrogate optimum of the iteration that produced P
    theta: float
    inner_status: str
    touch_gap: float = float("nan")  # f~(P|P) - f(P) at the expansion point
    k: float = float("nan")
    weak_duality_margin: float = float("nan")
    slackness: float = float("nan")  # |k g(P_raw)| / (1 + |f~|)
    dual_iters: int = 0


@dataclass
class ScaTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def P(self):
        return np.array([r.P for r in self.records])

    @property
    def f(self):
        return np.array([r.f for r in self.records])


@dataclass
class SolveResult:
    P: np.ndarray
    f: float
    k: float
    trace: ScaTrace
    status: str  # converged_x | converged_f | max_iters
    iterations: int

    @property
    def converged(self):
        return self.status.startswith("converged")


def _check_start(problem: AllocationProblem, P):
    if P.shape != (problem.size,):
        raise InfeasibleStart(f"start has shape {P.shape}, expected ({problem.size},)")
    if np.any(~np.isfinite(P)) or np.any(P < -NEG_SLACK):
        raise InfeasibleStart("start must be finite and componentwise nonnegative")
    if problem.constraint(P) > FEAS_SLACK * problem.p_total:
        raise InfeasibleStart(f"start overspends the budget by {problem.constraint(P):.3e}")


def build_bank(problem: AllocationProblem, P, cfg: SurrogateConfig = SurrogateConfig()):
    """Per-agent surrogates expanded at the SNRs induced by ``P``."""
    x = problem.snr_scale * np.asarray(P, dtype=float)
    return stack_surrogates([build_surrogate(a.params, float(xi), cfg)
                             for a, xi in zip(problem.agents, x)])


def sca_solve(problem: AllocationProblem, x_init=None, cfg: SolverConfig = SolverConfig(),
              inner=None) -> SolveResult:
    """Minimize ``-sum w_i u_i`` over the budget set by successive convex approximation.

    Parameters
    ----------
    problem : AllocationProblem
    x_init : array_like, optional
        Feasible start; the equal split by default.
    cfg : SolverConfig
    inner : callable, optional
        ``inner(bank, problem, k_warm, P_warm) -> DualResult``; a
        :class:`DualSubgradientSolver` built from ``cfg.dual`` by default.

    Returns
    -------
    SolveResult
        The last iterate, its objective, the final budget price and the
        full trace. ``status`` tells which stopping rule fired.
    """
    sca = cfg.sca
    inner = inner or DualSubgradientSolver(cfg.dual)
    P = problem.equal_split() if x_init is None else np.array(x_init, dtype=float)
    _check_start(problem, P)
    f = objective(problem, P)
    trace = ScaTrace([TraceRecord(P.copy(), f, float("nan"), float("nan"), "init")])
    k: Optional[float] = None
    status = "max_iters"
    w, c = problem.weights, problem.snr_scale

    for l in range(sca.max_outer_iters):
        try:
            bank = build_bank(problem, P, cfg.surrogate)
        except CptScaError as exc:
            raise InnerSolverFailure(l, exc) from exc
        touch = -float(np.sum(w * bank.value(c * P))) - f
        try:
            res: DualResult = inner(bank, problem, k, P)
            inner_status = res.status
        except BudgetExhausted as exc:
            res = exc.result
            inner_status = "budget"
        except CptScaError as exc:
            raise InnerSolverFailure(l, exc) from exc

        th = theta(sca, l)
        P_hat = res.P
        if sca.monotone_mode and res.f_surr > f + touch:
            # an inexact inner solve that does not lower the surrogate would
            # break the majorization descent chain; stay put instead
            P_hat = P
        residual = float(np.max(np.abs(P_hat - P)))
        P_new = P + th * (P_hat - P)
        P_new = np.maximum(P_new, 0.0)
        f_new = objective(problem, P_new)
        k = res.k
        trace.records[-1].touch_gap = touch
        trace.records.append(TraceRecord(
            P_new.copy(), f_new, res.f_surr, th, inner_status,
            k=res.k, weak_duality_margin=res.weak_duality_margin,
            slackness=abs(res.gap) / (1.0 + abs(res.f_surr)), dual_iters=res.iterations,
        ))
        df = abs(f_new - f)
        P, f = P_new, f_new
        if residual <= sca.x_tol * problem.p_total:
            status = "converged_x"
            break
        if df <= sca.f_tol * max(1.0, abs(f)) and residual <= np.sqrt(sca.x_tol) * problem.p_total:
            status = "converged_f"
            break

    return SolveResult(P, f, float(k), trace, status, len(trace) - 1)
