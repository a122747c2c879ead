"""Lagrangian relaxation of the convex surrogate problem.

For a fixed budget price ``k >= 0`` the Lagrangian separates across agents,
so each agent solves a 1-D convex problem by projected subgradient steps.
The price itself is updated by projected subgradient ascent on the dual
function ``h(k) = min_P L(P, k)``, whose gradient is the budget slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BudgetExhausted, Diverged
from .schedules import Harmonic
from .surrogate import SurrogateBank, stack_surrogates
from .utility import EPS_LIMIT, _exp_arg


@dataclass(frozen=True)
class DualConfig:
    """Knobs of the dual (``zeta``) and primal (``eta``) subgradient loops.

    With ``scaling="curvature"`` each primal subgradient is divided by the
    local curvature of its agent's term and each dual step by the slope of
    the budget slack in ``k``; the schedules then act as dimensionless
    damping factors.  ``scaling="none"`` takes raw steps ``eta_j * w`` with
    ``eta_j`` multiplied by ``0.1 * p_total / N``.

    Tolerances ``feas_tol`` and ``primal_tol`` are relative to the budget;
    ``gap_tol`` is relative to ``1 + |surrogate objective|``.
    """

    zeta: object = field(default_factory=lambda: Harmonic(1.0, 1e-3))
    eta: object = field(default_factory=lambda: Harmonic(1.0, 1e-3))
    scaling: str = "curvature"
    k_init: Optional[float] = None
    max_dual_iters: int = 200
    max_primal_iters: int = 2000
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    primal_tol: float = 1e-14
    box: bool = True
    divergence_cap: float = 1e6
    grow: float = 1.5
    shrink: float = 0.5

    def __post_init__(self):
        if self.scaling not in ("curvature", "none"):
            raise ValueError(f"unknown scaling {self.scaling!r}")
        if self.max_dual_iters < 1 or self.max_primal_iters < 1:
            raise ValueError("iteration budgets must be positive")


def project_nonneg(P):
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(P, dtype=float), 0.0)


def dual_step(k, zeta, g):
    """Projected ascent step ``(k + zeta * g)_+``."""
    return max(k + zeta * g, 0.0)


class Subproblem:
    """Per-agent pieces of ``L(P, k)`` laid out for vectorized 1-D solves.

    Slot ``i`` holds agent ``i``'s loss piece on ``[0, kink_i]`` and slot
    ``N + i`` its gain piece on ``[kink_i, cap]``, where ``kink_i`` is the
    power at which the agent's SNR reaches its reference point.  Each slot is
    smooth and convex on its interval, so projecting onto the interval never
    straddles the kink.
    """

    def __init__(self, bank: SurrogateBank, problem, box: bool = True):
        self.bank = bank
        self.problem = problem
        n = bank.size
        c = problem.snr_scale
        w = problem.weights
        self.n = n
        self.p_total = problem.p_total
        cap = problem.p_total if box else np.inf
        kink = bank.breakpoint / c
        self.lam, self.rate, self.center, self.scale, self.offset = (
            np.concatenate([lp, gp]) for lp, gp in zip(bank.loss, bank.gain))
        self.small = np.abs(self.rate) < EPS_LIMIT
        self.safe_rate = np.where(self.small, 1.0, self.rate)
        self.W = np.tile(w, 2)
        self.c = np.tile(c, 2)
        self.tau = np.tile(bank.tau, 2)
        self.xe = np.tile(bank.expansion, 2)
        self.lo = np.concatenate([np.zeros(n), np.clip(kink, 0.0, cap)])
        self.hi = np.concatenate([np.clip(kink, 0.0, cap), np.full(n, cap)])
        self.valid = np.concatenate([kink > 0.0, kink < cap])
        width = self.hi - self.lo
        self.width = np.where(np.isfinite(width), width, problem.p_total)

    def terms(self, x, k):
        """Value, derivative and curvature of ``-w*s(c*x) + k*x`` per slot."""
        snr = self.c * x
        t = (snr - self.center) / self.scale
        z = _exp_arg(np.where(self.small, 0.0, self.rate * t))
        em1 = np.expm1(z)
        e = em1 + 1.0
        val = np.where(self.small,
                       -t - self.rate * t * t / 2.0 - self.rate**2 * t**3 / 6.0,
                       -em1 / self.safe_rate)
        s_val = self.lam * val + self.offset
        s_d1 = -(self.lam / self.scale) * e
        s_d2 = -(self.lam / self.scale) * (self.rate / self.scale) * e
        if np.any(self.tau):
            dx = snr - self.xe
            s_val = s_val - self.tau * dx * dx
            s_d1 = s_d1 - 2.0 * self.tau * dx
            s_d2 = s_d2 - 2.0 * self.tau
        phi = -self.W * s_val + k * x
        d1 = -self.W * self.c * s_d1 + k
        d2 = -self.W * self.c * self.c * s_d2
        return phi, d1, d2

    def surrogate_objective(self, P):
        """``f~(P) = -sum_i w_i s_i(c_i P_i)``."""
        x = np.asarray(P, dtype=float) * self.problem.snr_scale
        return -float(np.sum(self.problem.weights * self.bank.value(x)))


def _as_subproblem(surrogates, problem, cfg):
    if isinstance(surrogates, Subproblem):
        return surrogates
    if not isinstance(surrogates, SurrogateBank):
        surrogates = stack_surrogates(surrogates)
    return Subproblem(surrogates, problem, box=cfg.box)


def lagrangian(surrogates, problem, P, k):
    """``f~(P) + k * (sum(P) - p_total)``."""
    if k < 0:
        raise ValueError("the budget price k must be nonnegative")
    sub = _as_subproblem(surrogates, problem, DualConfig())
    return sub.surrogate_objective(P) + k * problem.constraint(P)


@dataclass
class InnerResult:
    P: np.ndarray
    L: float
    iterations: int
    dg_dk: float  # slope of the budget slack in k at this solution (<= 0)


def inner_minimize(surrogates, problem, k, cfg: DualConfig = DualConfig(), P_start=None):
    """Minimize ``L(., k)`` over the allocation set by projected subgradient steps.

    Returns the best iterate found (by Lagrangian value) and its value.
    """
    if k < 0:
        raise ValueError("the budget price k must be nonnegative")
    sub = _as_subproblem(surrogates, problem, cfg)
    n = sub.n
    start = problem.equal_split() if P_start is None else np.asarray(P_start, dtype=float)
    x = np.clip(np.tile(start, 2), sub.lo, sub.hi)
    phi, d1, d2 = sub.terms(x, k)
    best_x, best_phi = x.copy(), phi.copy()
    tol = cfg.primal_tol * problem.p_total
    raw_scale = 0.1 * problem.p_total / n
    j = 0
    for j in range(cfg.max_primal_iters):
        eta = cfg.eta(j)
        if cfg.scaling == "curvature":
            step = np.where(d2 > 0.0, d1 / np.where(d2 > 0.0, d2, 1.0), np.sign(d1) * sub.width)
            step = np.clip(step, -sub.width, sub.width)
        else:
            step = raw_scale * d1
        x_new = np.clip(x - eta * step, sub.lo, sub.hi)
        if not cfg.box and np.any(x_new > cfg.divergence_cap * problem.p_total):
            raise Diverged(f"primal iterate exceeded {cfg.divergence_cap:g} x budget at step {j}")
        moved = float(np.max(np.abs(x_new - x)[sub.valid], initial=0.0))
        x = x_new
        phi, d1, d2 = sub.terms(x, k)
        better = phi < best_phi
        best_x[better] = x[better]
        best_phi[better] = phi[better]
        if moved <= tol:
            break

    best_phi = np.where(sub.valid, best_phi, np.inf)
    take_gain = best_phi[n:] <= best_phi[:n]
    P = np.where(take_gain, best_x[n:], best_x[:n])
    phi_agent = np.where(take_gain, best_phi[n:], best_phi[:n])
    L = math.fsum(phi_agent) - k * problem.p_total

    _, _, curv = sub.terms(np.tile(P, 2), k)
    curv = np.where(take_gain, curv[n:], curv[:n])
    lo = np.where(take_gain, sub.lo[n:], sub.lo[:n])
    hi = np.where(take_gain, sub.hi[n:], sub.hi[:n])
    edge = 1e-12 * problem.p_total
    interior = (P > lo + edge) & (P < hi - edge) & (curv > 0.0)
    dg_dk = -float(np.sum(1.0 / curv[interior])) if np.any(interior) else 0.0
    return InnerResult(P, L, j + 1, dg_dk)


@dataclass
class DualResult:
    """Primal-dual pair returned by :func:`dual_ascent`.

    ``P`` is feasible (radially rescaled onto the budget if the last inner
    solution overspent by up to ``feas_tol``); ``P_raw`` is the inner minimizer
    for the final price ``k`` and ``g``/``gap`` refer to it.
    """

    P: np.ndarray
    P_raw: np.ndarray
    k: float
    g: float
    gap: float
    h: float
    f_surr: float
    iterations: int
    status: str
    history: dict

    @property
    def weak_duality_margin(self):
        """``min f~(feasible P seen) - max h(k)``; nonnegative by weak duality."""
        feas = self.history["f_feasible"]
        best_primal = min(np.nanmin(feas) if np.any(np.isfinite(feas)) else np.inf, self.f_surr)
        return best_primal - float(np.max(self.history["h"]))


def _reference_price(sub: Subproblem, problem):
    x = problem.snr_scale * problem.p_total / problem.size
    marg = problem.weights * problem.snr_scale * sub.bank.slope(x)
    marg = marg[marg > 0]
    return float(np.median(marg)) if marg.size else 1.0


def dual_ascent(surrogates, problem, cfg: DualConfig = DualConfig(), k_start=None, P_start=None):
    """Projected subgradient ascent on the budget price.

    Raises :class:`BudgetExhausted` (carrying the best pair found) when
    ``max_dual_iters`` runs out before the feasibility and complementary
    slackness tolerances are met.
    """
    sub = _as_subproblem(surrogates, problem, cfg)
    p_total = problem.p_total
    k_ref = _reference_price(sub, problem)
    if k_start is not None:
        k = float(k_start)
    elif cfg.k_init is not None:
        k = float(cfg.k_init)
    else:
        k = k_ref
    P = problem.equal_split() if P_start is None else np.asarray(P_start, dtype=float)

    ks, hs, gs, fs, Ps = [], [], [], [], []
    scale = None
    g_prev, last, radius = 0.0, 0.0, math.inf
    status = "budget"
    for i in range(cfg.max_dual_iters):
        inner = inner_minimize(sub, problem, k, cfg, P)
        P = inner.P
        g = float(np.sum(P)) - p_total
        f_here = sub.surrogate_objective(P)
        ks.append(k)
        hs.append(inner.L)
        gs.append(g)
        fs.append(f_here if g <= 0.0 else np.nan)
        Ps.append(P)
        if g <= cfg.feas_tol * p_total and abs(min(g, 0.0) * k) <= cfg.gap_tol * (1.0 + abs(f_here)):
            status = "converged"
            break
        zeta = cfg.zeta(i)
        if cfg.scaling == "none":
            k = dual_step(k, zeta, g)
            continue
        if scale is None:
            # preconditioner: inverse slope of the slack at the starting price
            scale = -1.0 / inner.dg_dk if inner.dg_dk < 0.0 else max(k, k_ref) / p_total
        elif g * g_prev < 0.0:
            # the price crossed the root: never step past the previous price again
            scale *= cfg.shrink
            radius = abs(last)
        else:
            scale *= cfg.grow
            radius = cfg.grow * abs(last)
        g_prev = g
        k_new = dual_step(k, zeta * math.copysign(min(scale * abs(g), radius), g), 1.0)
        last, k = k_new - k, k_new

    history = {"k": np.array(ks), "h": np.array(hs), "g": np.array(gs),
               "f_feasible": np.array(fs)}

    def feasible(Pi):
        s = float(np.sum(Pi))
        return Pi * (p_total / s) if s > p_total else Pi

    idx = len(Ps) - 1
    if status != "converged":
        # best pair: lowest surrogate objective after restoring feasibility
        scores = [sub.surrogate_objective(feasible(Pi)) for Pi in Ps]
        idx = int(np.argmin(scores))
    P_raw = Ps[idx]
    P_out = feasible(P_raw)
    result = DualResult(
        P=P_out, P_raw=P_raw, k=ks[idx], g=gs[idx], gap=ks[idx] * gs[idx], h=hs[idx],
        f_surr=sub.surrogate_objective(P_out), iterations=len(ks), status=status,
        history=history,
    )
    if status != "converged":
        raise BudgetExhausted(result)
    return result


class DualSubgradientSolver:
    """Inner solver callable used by the SCA engine."""

    def __init__(self, cfg: DualConfig = DualConfig()):
        self.cfg = cfg

    def __call__(self, bank: SurrogateBank, problem, k_warm=None, P_warm=None) -> DualResult:
        sub = Subproblem(bank, problem, box=self.cfg.box)
        return dual_ascent(sub, problem, self.cfg, k_start=k_warm, P_start=P_warm)
