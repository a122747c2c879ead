"""Reference solvers that do not share code paths with the SCA engine.

``grid_search`` is exact over a budget lattice (dynamic programming over the
separable objective). ``multistart_local`` runs projected gradient descent
from random feasible starts, with budget handled by Euclidean projection
rather than a price.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooManyAgents
from .scenario import AllocationProblem, objective, objective_batch
from .utility import Side, eval_utility

MAX_GRID_AGENTS = 4
KINK_BAND = 1e-7
HISTORY = 10  # nonmonotone line search window


@dataclass(frozen=True)
class OracleConfig:
    grid_points_per_axis: int = 401
    n_starts: int = 16
    start_seed: int = 0
    local_tol: float = 1e-9
    max_local_iters: int = 2000

    def __post_init__(self):
        if self.grid_points_per_axis < 2:
            raise ValueError("grid needs at least 2 points per axis")
        if self.n_starts < 1 or self.max_local_iters < 1:
            raise ValueError("n_starts and max_local_iters must be positive")
        if self.local_tol <= 0:
            raise ValueError("local_tol must be positive")


# --- exact lattice search ---------------------------------------------------

def grid_search(problem: AllocationProblem, cfg: OracleConfig = OracleConfig()):
    """Best point of ``{j * h : j integer >= 0, sum(j) <= G - 1}``, ``h = P_total / (G - 1)``.

    The objective is a sum of per-agent terms, so a min-plus recursion over
    the remaining budget finds the lattice optimum exactly without
    enumerating all points. Among tied optima the lexicographically smallest
    allocation is returned.
    """
    n = problem.size
    if n > MAX_GRID_AGENTS:
        raise TooManyAgents(f"grid search is limited to {MAX_GRID_AGENTS} agents, got {n}")
    G = cfg.grid_points_per_axis
    levels = np.arange(G) * (problem.p_total / (G - 1))
    # cost[i, j]: agent i's term when it receives j lattice units
    cost = np.array([-w * eval_utility(a.params, c * levels) for a, w, c
                     in zip(problem.agents, problem.weights, problem.snr_scale)])

    # tail[i][r]: best cost of agents i..n-1 using at most r units
    tail = [None] * (n + 1)
    tail[n] = np.zeros(G)
    r = np.arange(G)
    for i in range(n - 1, -1, -1):
        # totals[r, j] = cost[i, j] + tail[i+1][r - j] for j <= r
        j = np.arange(G)
        rem = r[:, None] - j[None, :]
        totals = np.where(rem >= 0, cost[i][None, :] + tail[i + 1][np.maximum(rem, 0)], np.inf)
        tail[i] = totals.min(axis=1)

    units = []
    left = G - 1
    for i in range(n):
        j = np.arange(left + 1)
        cand = cost[i, j] + tail[i + 1][left - j]
        pick = int(np.flatnonzero(cand == cand.min())[0])
        units.append(pick)
        left -= pick
    P = levels[np.array(units)]
    return P, objective(problem, P)


# --- projection onto {lo <= P <= hi, sum(P) <= b} -------------------------

def project_box_budget(Y, lo, hi, budget, iters=200):
    """Project rows of ``Y`` onto ``{lo <= x <= hi, sum(x) <= budget}``.

    The solution is ``clip(y - theta, lo, hi)`` with the smallest
    ``theta >= 0`` meeting the budget, found by bisection. Requires
    ``sum(lo) <= budget``. Returns ``(X, theta)``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    X = np.clip(Y, lo, hi)
    theta = np.zeros(Y.shape[0])
    over = X.sum(axis=1) > budget
    if np.any(over):
        y, l_, h_ = Y[over], lo[over], hi[over]
        a = np.zeros(y.shape[0])
        z = np.max(y - l_, axis=1)
        for _ in range(iters):
            mid = 0.5 * (a + z)
            heavy = np.clip(y - mid[:, None], l_, h_).sum(axis=1) > budget
            a = np.where(heavy, mid, a)
            z = np.where(heavy, z, mid)
            if np.all(z - a <= 1e-15 * np.maximum(1.0, z)):
                break
        X[over] = np.clip(y - z[:, None], l_, h_)
        theta[over] = z
    return X, theta


@dataclass
class StartOutcome:
    start: np.ndarray
    P: np.ndarray
    f: float
    iterations: int
    converged: bool


# --- multistart projected gradient ------------------------------------------

def uniform_simplex_starts(n_agents, budget, n_starts, seed):
    """Uniform samples from ``{P >= 0, sum(P) <= budget}``.

    Normalized exponentials with one extra slack coordinate.
    """
    rng = np.random.default_rng(seed)
    e = rng.exponential(1.0, size=(n_starts, n_agents + 1))
    return budget * e[:, :n_agents] / e.sum(axis=1, keepdims=True)


def _gradient(problem, P, side=Side.RIGHT):
    x = P * problem.snr_scale
    return -problem.weights * problem.snr_scale * problem.bank.derivative(x, side)


def multistart_local(problem: AllocationProblem, cfg: OracleConfig = OracleConfig()):
    """Spectral projected gradient from ``n_starts`` random feasible points.

    Each agent's utility is smooth on either side of its kink, so every step
    keeps an agent inside its current piece ``[0, kink]`` or ``[kink, inf)``
    and projects onto that box intersected with the budget. An agent sitting
    on its kink changes piece only when the matching one-sided slope beats
    the budget price. Step lengths are Barzilai-Borwein with a nonmonotone
    Armijo search; a row stops once its projected step is shorter than
    ``local_tol * p_total``.

    All starts advance together as rows of one array. Returns
    ``(P_best, f_best, outcomes)``.
    """
    b = problem.p_total
    n = problem.size
    starts = uniform_simplex_starts(n, b, cfg.n_starts, cfg.start_seed)
    P = starts.copy()
    f = objective_batch(problem, P)
    gscale = np.maximum(np.abs(_gradient(problem, P)).max(axis=1), 1e-300)
    t0 = b / gscale
    t_lo, t_hi = 1e-10 * t0, 1e10 * t0
    t = t0.copy()
    hist = np.repeat(f[:, None], HISTORY, axis=1)
    best_P, best_f = P.copy(), f.copy()
    live = np.ones(cfg.n_starts, dtype=bool)
    iters = np.zeros(cfg.n_starts, dtype=int)
    tol = cfg.local_tol * b

    kink = np.array([a.params.x0 for a in problem.agents]) / problem.snr_scale
    band = KINK_BAND * np.maximum(np.abs(kink), b)
    kink_row = np.broadcast_to(kink, (cfg.n_starts, n))

    for _ in range(cfg.max_local_iters):
        if not live.any():
            break
        rows = np.flatnonzero(live)
        Pr = P[rows]
        K = kink_row[rows]
        near = np.abs(Pr - K) <= band
        tight = np.where(near, K, Pr).sum(axis=1) > b
        near[tight] &= K[tight] < Pr[tight]  # only snap downward on a tight budget
        Pin = np.where(near, K, Pr)
        below = ~near & (Pin < K)
        gR = _gradient(problem, Pin, Side.RIGHT)
        gL = _gradient(problem, Pin, Side.LEFT)
        lo = np.where(below, 0.0, K)
        hi = np.where(below | near, K, np.inf)
        lo = np.minimum(lo, Pin)  # agents past a kink of zero power etc.
        tr = t[rows]

        # budget price seen with kink agents held in place
        g = np.where(below, gL, gR)
        _, theta = project_box_budget(Pin - tr[:, None] * g, lo, hi, b)
        price = (theta / tr)[:, None]
        down = near & (gL + price > 0.0)
        up = near & ~down & (gR + price < 0.0)
        g = np.where(below | down, gL, gR)
        lo = np.where(down, 0.0, lo)
        hi = np.where(up, np.inf, hi)

        X, _ = project_box_budget(Pin - tr[:, None] * g, lo, hi, b)
        d = X - Pin
        slope = np.sum(g * d, axis=1)
        f_in = objective_batch(problem, Pin)
        ref = np.maximum(hist[rows].max(axis=1), f_in)

        lam = np.ones(rows.size)
        ok = np.zeros(rows.size, dtype=bool)
        newP, newf = Pin.copy(), f_in.copy()
        todo = np.flatnonzero(np.abs(d).max(axis=1) > tol)
        for _ in range(50):
            if todo.size == 0:
                break
            cand = Pin[todo] + lam[todo, None] * d[todo]
            fc = objective_batch(problem, cand)
            good = fc <= ref[todo] + 1e-4 * lam[todo] * slope[todo]
            newP[todo[good]], newf[todo[good]] = cand[good], fc[good]
            ok[todo[good]] = True
            lam[todo[~good]] *= 0.5
            todo = todo[~good]

        # Barzilai-Borwein length from the change in the piecewise gradient
        s_vec = newP - Pin
        g_new = np.where(newP < K, _gradient(problem, newP, Side.LEFT), _gradient(problem, newP))
        y_vec = g_new - g
        sty = np.sum(s_vec * y_vec, axis=1)
        sts = np.sum(s_vec * s_vec, axis=1)
        bb = np.where(sty > 0.0, sts / np.where(sty > 0.0, sty, 1.0), t_hi[rows])
        t[rows] = np.clip(bb, t_lo[rows], t_hi[rows])

        P[rows], f[rows] = newP, newf
        hist[rows] = np.roll(hist[rows], 1, axis=1)
        hist[rows, 0] = newf
        improved = newf < best_f[rows]
        best_P[rows[improved]], best_f[rows[improved]] = newP[improved], newf[improved]
        iters[rows] += 1
        done = (np.abs(d).max(axis=1) <= tol) | ~ok
        live[rows[done]] = False

    P = best_P
    outcomes = [StartOutcome(starts[s], P[s].copy(), objective(problem, P[s]), int(iters[s]),
                             not bool(live[s])) for s in range(cfg.n_starts)]
    order = sorted(range(cfg.n_starts), key=lambda s: (outcomes[s].f, tuple(outcomes[s].P)))
    best = outcomes[order[0]]
    return best.P.copy(), best.f, outcomes
