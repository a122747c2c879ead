"""Concave minorants of the CPT utility, one per agent and SCA iterate.

Each surrogate is two exponential pieces joined at the reference point::

    piece(x) = lam * (1 - exp(rate * (x - center) / scale)) / rate + offset

with ``rate <= 0`` so every piece is concave.  Six cases, keyed on the signs
of ``alpha/gamma1``, ``beta/gamma2`` and on where the expansion point sits
relative to ``x0``, decide which side is kept and which is replaced.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import KinkAt, NoCaseApplies, SlopeOrderViolation
from .utility import (
    EPS_LIMIT,
    CptParams,
    Side,
    _exp_arg,
    eval_derivative,
    eval_utility,
    gain_value,
    loss_value,
)


class Case(enum.IntEnum):
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3
    CASE4 = 4
    CASE5 = 5
    CASE6 = 6


MAX_SPAN_EXPONENT = 30.0


@dataclass(frozen=True)
class SurrogateConfig:
    """Free choices left open by the construction.

    Attributes:
        eps_curv: smallest admissible curvature magnitude for a replaced piece.
        rate: optional fixed exponent rate (still capped by the case bound).
        tau: weight of the proximal term ``-tau * (x - x_expansion)**2``.
        kink_side: which one-sided slope serves as subgradient at ``x0``.
    """

    eps_curv: float = 1e-3
    rate: Optional[float] = None
    tau: float = 0.0
    kink_side: Side = Side.RIGHT


def _safe_rate(rate):
    return np.where(np.abs(rate) < EPS_LIMIT, 1.0, rate)


def piece_value(lam, rate, center, scale, offset, x):
    """Vectorized piece value (parameters may be arrays broadcast with ``x``)."""
    rate = np.asarray(rate, dtype=float)
    t = (np.asarray(x, dtype=float) - center) / scale
    small = np.abs(rate) < EPS_LIMIT
    z = _exp_arg(np.where(small, 0.0, rate * t))
    exact = -np.expm1(z) / _safe_rate(rate)
    series = -t - rate * t**2 / 2.0 - rate**2 * t**3 / 6.0
    return lam * np.where(small, series, exact) + offset


def piece_slope(lam, rate, center, scale, x):
    t = (np.asarray(x, dtype=float) - center) / scale
    return -(lam / scale) * np.exp(_exp_arg(rate * t))


def piece_curvature(lam, rate, center, scale, x):
    t = (np.asarray(x, dtype=float) - center) / scale
    return -(lam / scale) * (rate / scale) * np.exp(_exp_arg(rate * t))


@dataclass(frozen=True)
class SurrogatePiece:
    lam: float
    rate: float
    center: float
    scale: float
    offset: float = 0.0

    def value(self, x):
        out = piece_value(self.lam, self.rate, self.center, self.scale, self.offset, x)
        return float(out) if np.ndim(x) == 0 else out

    def slope(self, x):
        out = piece_slope(self.lam, self.rate, self.center, self.scale, x)
        return float(out) if np.ndim(x) == 0 else out

    def curvature(self, x):
        out = piece_curvature(self.lam, self.rate, self.center, self.scale, x)
        return float(out) if np.ndim(x) == 0 else out

    def strongly_concave(self, eps_curv):
        return self.rate <= -eps_curv and self.lam * self.rate > 0


@dataclass(frozen=True)
class SurrogateUtility:
    """Concave composite of a gain piece (``x >= breakpoint``) and a loss piece.

    ``gain_kept``/``loss_kept`` mark sides that reproduce the original branch
    up to the constant ``gain_shift``/``loss_shift``; those sides are
    evaluated through the utility itself so they match it bit for bit.
    """

    gain: SurrogatePiece
    loss: SurrogatePiece
    breakpoint: float
    case_id: Case
    passthrough: bool
    expansion: float
    tau: float = 0.0
    gain_kept: bool = False
    loss_kept: bool = False
    gain_shift: float = 0.0
    loss_shift: float = 0.0


def original_gain_piece(p: CptParams) -> SurrogatePiece:
    offset = 0.0 if p.mu1 == 1.0 else p.lambda1 * (p.mu1 - 1.0) / p.alpha
    return SurrogatePiece(p.lambda1 / p.gamma1, p.gain_ratio, p.x0, p.m, offset)


def original_loss_piece(p: CptParams) -> SurrogatePiece:
    offset = 0.0 if p.mu2 == 1.0 else p.lambda2 * (p.mu2 - 1.0) / p.beta
    return SurrogatePiece(p.lambda2 / p.gamma2, p.loss_ratio, p.x0, p.n, offset)


def select_case(p: CptParams, x_expansion: float) -> Case:
    """Pick the surrogate case for an agent expanded at ``x_expansion``."""
    if not (p.gain_slope0 > 0 and p.loss_slope0 > 0):
        raise NoCaseApplies(
            "surrogate cases need an increasing utility (lambda/gamma < 0 on both sides)"
        )
    a, b = p.gain_ratio, p.loss_ratio
    x0 = p.x0
    if a < 0 and b < 0:
        return Case.CASE1
    if a < 0:
        return Case.CASE2 if x_expansion >= x0 else Case.CASE5
    if b < 0:
        return Case.CASE4 if x_expansion <= x0 else Case.CASE3
    if x_expansion == x0:
        return Case.CASE6
    return Case.CASE3 if x_expansion > x0 else Case.CASE5


def _check_loss_aversion(p: CptParams, case: Case):
    if p.loss_slope0 < p.gain_slope0:
        raise SlopeOrderViolation(
            f"{case.name}: u'(x0-)={p.loss_slope0:.6g} < u'(x0+)={p.gain_slope0:.6g}; "
            "no concave junction keeps the original one-sided slopes"
        )


def build_surrogate(p: CptParams, x_expansion: float,
                    cfg: SurrogateConfig = SurrogateConfig()) -> SurrogateUtility:
    """Concave surrogate of ``u`` touching it (value and slope) at ``x_expansion``."""
    case = select_case(p, x_expansion)
    x0, m, n = p.x0, p.m, p.n
    a, b = p.gain_ratio, p.loss_ratio

    def rate_for(ratio, bound=0.0):
        r = cfg.rate if cfg.rate is not None else -max(abs(ratio), cfg.eps_curv)
        return min(bound, r)

    u_x0 = gain_value(p, x0)
    common = dict(breakpoint=x0, case_id=case, expansion=float(x_expansion), tau=cfg.tau)

    if case is Case.CASE1:
        _check_loss_aversion(p, case)
        return SurrogateUtility(original_gain_piece(p), original_loss_piece(p),
                                passthrough=True, gain_kept=True, loss_kept=True, **common)

    if case is Case.CASE2:
        _check_loss_aversion(p, case)
        loss = SurrogatePiece(-n * p.loss_slope0, rate_for(b), x0, n, u_x0)
        return SurrogateUtility(original_gain_piece(p), loss, passthrough=False,
                                gain_kept=True, **common)

    if case is Case.CASE4:
        _check_loss_aversion(p, case)
        gain = SurrogatePiece(-m * p.gain_slope0, rate_for(a), x0, m, loss_value(p, x0))
        return SurrogateUtility(gain, original_loss_piece(p), passthrough=False,
                                loss_kept=True, **common)

    if case is Case.CASE6:
        _check_loss_aversion(p, case)
        gain = SurrogatePiece(-m * p.gain_slope0, rate_for(a), x0, m, u_x0)
        loss = SurrogatePiece(-n * p.loss_slope0, rate_for(b), x0, n, u_x0)
        return SurrogateUtility(gain, loss, passthrough=False, **common)

    if case is Case.CASE3:
        xe = float(x_expansion)
        r = rate_for(a)
        if cfg.rate is None:
            # any concave tangent lies under the convex gain branch; flatten it
            # enough that its slope at x0 stays finite
            r = max(r, -max(MAX_SPAN_EXPONENT * m / (xe - x0), cfg.eps_curv))
        gain = SurrogatePiece(-m * eval_derivative(p, xe), r, xe, m, eval_utility(p, xe))
        slope_join = max(p.loss_slope0, gain.slope(x0))
        rate = rate_for(b, min(0.0, b))
        if slope_join == p.loss_slope0 and rate == b:
            # the loss piece is the original branch moved to meet the gain piece
            shift = gain.value(x0) - loss_value(p, x0)
            orig = original_loss_piece(p)
            loss = replace(orig, offset=orig.offset + shift)
            return SurrogateUtility(gain, loss, passthrough=False, loss_kept=True,
                                    loss_shift=shift, **common)
        loss = SurrogatePiece(-n * slope_join, rate, x0, n, gain.value(x0))
        return SurrogateUtility(gain, loss, passthrough=False, **common)

    # CASE5
    xe = float(x_expansion)
    loss = SurrogatePiece(-n * eval_derivative(p, xe), rate_for(b), xe, n, eval_utility(p, xe))
    slope_join = min(p.gain_slope0, loss.slope(x0))
    rate = rate_for(a, min(0.0, a))
    if slope_join == p.gain_slope0 and rate == a:
        shift = loss.value(x0) - gain_value(p, x0)
        orig = original_gain_piece(p)
        gain = replace(orig, offset=orig.offset + shift)
        return SurrogateUtility(gain, loss, passthrough=False, gain_kept=True,
                                gain_shift=shift, **common)
    gain = SurrogatePiece(-m * slope_join, rate, x0, m, loss.value(x0))
    return SurrogateUtility(gain, loss, passthrough=False, **common)


def eval_surrogate(s: SurrogateUtility, p: CptParams, x):
    xa = np.asarray(x, dtype=float)
    if s.passthrough:
        out = np.asarray(eval_utility(p, xa), dtype=float)
    else:
        g = gain_value(p, xa) + s.gain_shift if s.gain_kept else s.gain.value(xa)
        lo = loss_value(p, xa) + s.loss_shift if s.loss_kept else s.loss.value(xa)
        out = np.where(xa >= s.breakpoint, g, lo)
    if s.tau:
        out = out - s.tau * (xa - s.expansion) ** 2
    return float(out) if np.ndim(x) == 0 else out


def eval_surrogate_slope(s: SurrogateUtility, p: CptParams, x, side: Side = Side.TWO_SIDED):
    """Derivative of the surrogate; at the breakpoint ``side`` picks the piece."""
    side = Side(side)
    xa = np.asarray(x, dtype=float)
    at_kink = xa == s.breakpoint
    if side is Side.TWO_SIDED and np.any(at_kink):
        raise KinkAt(s.breakpoint)
    use_gain = (xa > s.breakpoint) | (at_kink & (side is Side.RIGHT))
    if s.gain_kept:
        g = eval_derivative(p, np.maximum(xa, s.breakpoint), Side.RIGHT)
    else:
        g = s.gain.slope(xa)
    if s.loss_kept:
        lo = eval_derivative(p, np.minimum(xa, s.breakpoint), Side.LEFT)
    else:
        lo = s.loss.slope(xa)
    out = np.where(use_gain, g, lo)
    if s.tau:
        out = out - 2.0 * s.tau * (xa - s.expansion)
    return float(out) if np.ndim(x) == 0 else out


@dataclass
class RuleReport:
    """Per-rule diagnostics of one surrogate on one grid.

    ``rule6_error`` is ``None`` when the expansion point is not near ``x0``.
    """

    strong_concavity_margin: float
    gradient_match_error: float
    slope_continuity_error: float
    minorization_margin: float
    rule6_error: Optional[float]
    concavity_error: float = 0.0  # largest raw second difference on the grid
    thresholds: dict = field(default_factory=lambda: {
        "gradient": 1e-10, "continuity": 1e-6, "minorization": -1e-9, "rule6": 1e-6,
        "concavity": 1e-9})

    @property
    def passed(self):
        t = self.thresholds
        return {
            "strong_concavity": self.strong_concavity_margin >= 0.0,
            "concavity": self.concavity_error <= t["concavity"],
            "gradient_match": self.gradient_match_error <= t["gradient"],
            "slope_continuity": self.slope_continuity_error <= t["continuity"],
            "minorization": self.minorization_margin >= t["minorization"],
            "rule6": self.rule6_error is None or self.rule6_error <= t["rule6"],
        }

    @property
    def ok(self):
        return all(self.passed.values())


def verify_construction_rules(s, p: CptParams, x_expansion: float, grid,
                              eps_curv: float = 1e-3, near_x0: float = 1e-6,
                              value_fn=None, slope_fn=None) -> RuleReport:
    """Check the surrogate construction rules numerically on ``grid``.

    ``value_fn(x)``/``slope_fn(x, side)`` override the surrogate evaluation, so
    arbitrary candidate minorants (e.g. a tangent line) can be audited too.
    """
    x = np.sort(np.asarray(grid, dtype=float))
    if x.size == 0:
        raise ValueError("grid must be nonempty")
    if value_fn is None:
        value_fn = lambda z: eval_surrogate(s, p, z)  # noqa: E731
    if slope_fn is None:
        slope_fn = lambda z, side: eval_surrogate_slope(s, p, z, side)  # noqa: E731
    su = np.asarray(value_fn(x), dtype=float)
    u = np.asarray(eval_utility(p, x), dtype=float)

    if x.size >= 3:
        left = (su[1:-1] - su[:-2]) / (x[1:-1] - x[:-2])
        right = (su[2:] - su[1:-1]) / (x[2:] - x[1:-1])
        half = (x[2:] - x[:-2]) / 2.0
        d2 = (right - left) / half
        concavity = float(np.min(half**2 * (-d2 - eps_curv)))
        second_diff = float(np.max(su[2:] - 2.0 * su[1:-1] + su[:-2]))
    else:
        concavity = float("inf")
        second_diff = 0.0

    xe = float(x_expansion)
    if xe == p.x0:
        grad_err = max(abs(slope_fn(xe, Side.RIGHT) - eval_derivative(p, xe, Side.RIGHT)),
                       abs(slope_fn(xe, Side.LEFT) - eval_derivative(p, xe, Side.LEFT)))
    else:
        grad_err = abs(slope_fn(xe, Side.TWO_SIDED) - eval_derivative(p, xe))

    # A smooth slope changes by O(d) across [x - d, x + d]; comparing two
    # probe widths cancels that term and leaves any genuine jump (measured
    # relative to the slope's size).
    delta = 1e-7
    off = x[np.abs(x - p.x0) > 2 * delta]
    if off.size:
        def jump(d):
            return (np.asarray(slope_fn(off + d, Side.TWO_SIDED), dtype=float)
                    - np.asarray(slope_fn(off - d, Side.TWO_SIDED), dtype=float))
        size = 1.0 + np.abs(np.asarray(slope_fn(off, Side.TWO_SIDED), dtype=float))
        continuity = float(np.max(np.abs(2.0 * jump(delta / 2) - jump(delta)) / size))
    else:
        continuity = 0.0

    minor = float(np.min(u - su))

    rule6 = None
    if abs(xe - p.x0) <= near_x0:
        rule6 = max(abs(slope_fn(p.x0, Side.RIGHT) - eval_derivative(p, p.x0, Side.RIGHT)),
                    abs(slope_fn(p.x0, Side.LEFT) - eval_derivative(p, p.x0, Side.LEFT)))
    return RuleReport(concavity, float(grad_err), continuity, minor,
                      None if rule6 is None else float(rule6), second_diff)


@dataclass(frozen=True)
class SurrogateBank:
    """Column-stacked piece parameters of ``N`` surrogates for vectorized solves."""

    gain: tuple  # (lam, rate, center, scale, offset), each shape (N,)
    loss: tuple
    breakpoint: np.ndarray
    expansion: np.ndarray
    tau: np.ndarray

    @property
    def size(self):
        return self.breakpoint.size

    def value(self, x):
        x = np.asarray(x, dtype=float)
        g = piece_value(*self.gain, x)
        lo = piece_value(*self.loss, x)
        return np.where(x >= self.breakpoint, g, lo) - self.tau * (x - self.expansion) ** 2

    def slope(self, x, side: Side = Side.RIGHT):
        x = np.asarray(x, dtype=float)
        use_gain = (x > self.breakpoint) | ((x == self.breakpoint) & (Side(side) is Side.RIGHT))
        g = piece_slope(*self.gain[:4], x)
        lo = piece_slope(*self.loss[:4], x)
        return np.where(use_gain, g, lo) - 2.0 * self.tau * (x - self.expansion)


def stack_surrogates(surrogates) -> SurrogateBank:
    def cols(pieces):
        return tuple(np.array([getattr(pc, f) for pc in pieces], dtype=float)
                     for f in ("lam", "rate", "center", "scale", "offset"))

    return SurrogateBank(
        gain=cols([s.gain for s in surrogates]),
        loss=cols([s.loss for s in surrogates]),
        breakpoint=np.array([s.breakpoint for s in surrogates], dtype=float),
        expansion=np.array([s.expansion for s in surrogates], dtype=float),
        tau=np.array([s.tau for s in surrogates], dtype=float),
    )


# --- random test pairs ------------------------------------------------------

# (gain curvature sign, loss curvature sign, side of x0 holding x_expansion)
_CASE_LAYOUT = {
    Case.CASE1: [(-1, -1, 0)],
    Case.CASE2: [(-1, 1, 1)],
    Case.CASE3: [(1, -1, 1), (1, 1, 1)],
    Case.CASE4: [(1, -1, -1)],
    Case.CASE5: [(-1, 1, -1), (1, 1, -1)],
    Case.CASE6: [(1, 1, 0)],
}


def sample_case_pair(rng: np.random.Generator, case: Case, near_x0: float = 0.2,
                     near_dist: float = 1e-8):
    """Random loss-averse ``(CptParams, x_expansion)`` that falls in ``case``.

    With probability ``near_x0`` the expansion point is placed within
    ``near_dist`` of the reference point (on the side the case requires) so
    that the slope-limit rule can be exercised. The one-sided slopes converge
    linearly, with error about ``slope * (|b| + |rate|) * d / n``; the default
    distance keeps that below 1e-6 for every parameter set drawn here.
    """
    case = Case(case)
    layouts = _CASE_LAYOUT[case]
    sg, sl, side = layouts[rng.integers(len(layouts))]
    A1 = rng.uniform(0.5, 2.0)
    A2 = A1 * rng.uniform(1.0, 3.0)
    m, n = rng.uniform(0.5, 3.0, size=2)
    alpha, beta = rng.uniform(0.1, 1.5, size=2)
    g1 = sg * rng.uniform(0.5, 1.5)
    g2 = sl * rng.uniform(0.5, 1.5)
    x0 = rng.uniform(-2.0, 2.0)
    p = CptParams(alpha, beta, -A1 * g1 * m, -A2 * g2 * n, g1, g2, 1.0, 1.0, m, n, x0)
    if case is Case.CASE6 or (case is Case.CASE1 and rng.random() < near_x0):
        xe = x0
    elif case is Case.CASE1:
        xe = x0 + rng.uniform(-5.0, 5.0)
    else:
        dist = rng.uniform(0.0, near_dist) if rng.random() < near_x0 else rng.uniform(0.0, 5.0)
        if side < 0:
            dist = max(dist, 1e-12)  # strictly below x0 for the left-side cases
        xe = x0 + side * dist
        if side > 0 and case is Case.CASE3 and xe == x0:
            xe = np.nextafter(x0, np.inf)
    return p, float(xe)
