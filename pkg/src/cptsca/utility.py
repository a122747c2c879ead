"""Generalized CPT utility: evaluation, one-sided slopes, shapes, U/R split.

The utility is piecewise exponential around a reference point ``x0``::

    u(x) = lambda1 * (mu1 - exp(alpha/gamma1 * (x - x0)/m)) / alpha    x >= x0
    u(x) = lambda2 * (mu2 - exp(beta/gamma2  * (x - x0)/n)) / beta     x <  x0

All functions accept scalars or numpy arrays for ``x``; scalar in, float out.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidParams, KinkAt, ProbOutOfRange, UtilityOverflow

EPS_LIMIT = 1e-8
EXP_CLIP = 700.0
EXP_HARD_CAP = 1e4


@dataclass(frozen=True)
class CptParams:
    """The ten shape parameters of one agent plus its reference point."""

    alpha: float
    beta: float
    lambda1: float
    lambda2: float
    gamma1: float
    gamma2: float
    mu1: float = 1.0
    mu2: float = 1.0
    m: float = 1.0
    n: float = 1.0
    x0: float = 0.0

    @property
    def gain_ratio(self):
        """Exponent coefficient ``alpha/gamma1`` of the gain branch."""
        return self.alpha / self.gamma1

    @property
    def loss_ratio(self):
        return self.beta / self.gamma2

    @property
    def gain_slope0(self):
        """Right derivative at ``x0``: ``-lambda1 / (gamma1 * m)``."""
        return -self.lambda1 / (self.gamma1 * self.m)

    @property
    def loss_slope0(self):
        """Left derivative at ``x0``: ``-lambda2 / (gamma2 * n)``."""
        return -self.lambda2 / (self.gamma2 * self.n)

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return CptParams(**values)

    def to_dict(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, data):
        return cls(**{f.name: float(data[f.name]) for f in fields(cls) if f.name in data})


class Shape(enum.Enum):
    CONSTANT = "Constant"
    LINEAR = "Linear"
    CONVEX = "Convex"
    CONCAVE = "Concave"
    OTHER = "Other"


@dataclass(frozen=True)
class ShapeClass:
    gain_shape: Shape
    loss_shape: Shape


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    TWO_SIDED = "two-sided"


class PwfKind(enum.Enum):
    IDENTITY = "identity"
    TVERSKY_KAHNEMAN = "tversky-kahneman"


# Below this the TK-92 weighting is no longer monotone on [0, 1].
TK_DELTA_MIN = 0.28


@dataclass(frozen=True)
class Pwf:
    """Probability weighting function."""

    kind: PwfKind = PwfKind.IDENTITY
    delta: float = 0.65

    def __post_init__(self):
        if not isinstance(self.kind, PwfKind):
            object.__setattr__(self, "kind", PwfKind(self.kind))
        if self.kind is PwfKind.TVERSKY_KAHNEMAN and not TK_DELTA_MIN <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [{TK_DELTA_MIN}, 1], got {self.delta}")


def validate_params(p: CptParams) -> None:
    """Raise :class:`InvalidParams` naming the first violated invariant."""
    for name in ("alpha", "beta", "lambda1", "lambda2", "gamma1", "gamma2",
                 "mu1", "mu2", "m", "n", "x0"):
        if not math.isfinite(getattr(p, name)):
            raise InvalidParams(name, f"{name} must be finite")
    for name in ("lambda1", "lambda2", "gamma1", "gamma2"):
        if getattr(p, name) == 0.0:
            raise InvalidParams(name, f"{name} must be nonzero")
    for name in ("m", "n"):
        if getattr(p, name) <= 0.0:
            raise InvalidParams(name, f"{name} must be positive")
    # (mu - 1)/alpha has no limit at alpha = 0 unless mu = 1
    if p.alpha == 0.0 and p.mu1 != 1.0:
        raise InvalidParams("alpha", "alpha = 0 requires mu1 = 1")
    if p.beta == 0.0 and p.mu2 != 1.0:
        raise InvalidParams("beta", "beta = 0 requires mu2 = 1")


def _exp_arg(z):
    z = np.asarray(z, dtype=float)
    if np.any(z > EXP_HARD_CAP):
        raise UtilityOverflow(
            f"exponent argument {float(np.max(z)):.4g} exceeds the hard cap {EXP_HARD_CAP:g}"
        )
    return np.clip(z, -EXP_CLIP, EXP_CLIP)


def _branch_value(lam, curv, gamma, mu, scale, t):
    """``lam * (mu - exp(curv/gamma * t/scale)) / curv`` with a series near curv=0.

    Parameters broadcast against ``t`` so one agent or a stack of agents go
    through the same arithmetic.
    """
    curv = np.asarray(curv, dtype=float)
    c = t / (gamma * scale)
    small = np.abs(curv) < EPS_LIMIT
    safe = np.where(small, 1.0, curv)
    z = _exp_arg(np.where(small, 0.0, curv * c))
    exact = lam * ((mu - 1.0) - np.expm1(z)) / safe
    if not np.any(small):
        return exact
    # (1 - e^{curv c})/curv expanded through second order in curv
    head = np.where(mu == 1.0, 0.0, (mu - 1.0) / np.where(curv == 0.0, 1.0, curv))
    series = lam * (head - c - curv * c**2 / 2.0 - curv**2 * c**3 / 6.0)
    return np.where(small, series, exact)


def _branch_slope(lam, curv, gamma, scale, t):
    z = _exp_arg(curv / gamma * t / scale)
    return -lam / (gamma * scale) * np.exp(z)


def _branch_curvature(lam, curv, gamma, scale, t):
    z = _exp_arg(curv / gamma * t / scale)
    return -lam / (gamma * scale) * (curv / (gamma * scale)) * np.exp(z)


def _scalar_out(x, out):
    return float(out) if np.ndim(x) == 0 else out


def gain_value(p: CptParams, x):
    """Gain-branch formula evaluated at ``x`` regardless of the side of x0."""
    t = np.asarray(x, dtype=float) - p.x0
    return _scalar_out(x, _branch_value(p.lambda1, p.alpha, p.gamma1, p.mu1, p.m, t))


def loss_value(p: CptParams, x):
    t = np.asarray(x, dtype=float) - p.x0
    return _scalar_out(x, _branch_value(p.lambda2, p.beta, p.gamma2, p.mu2, p.n, t))


def eval_utility(p: CptParams, x):
    """CPT utility of outcome ``x`` (gain branch at and above ``x0``)."""
    xa = np.asarray(x, dtype=float)
    t = xa - p.x0
    gain = t >= 0.0
    out = np.empty_like(t)
    if np.any(gain):
        out[gain] = _branch_value(p.lambda1, p.alpha, p.gamma1, p.mu1, p.m, t[gain])
    if not np.all(gain):
        out[~gain] = _branch_value(p.lambda2, p.beta, p.gamma2, p.mu2, p.n, t[~gain])
    return _scalar_out(x, out)


def eval_derivative(p: CptParams, x, side: Side = Side.TWO_SIDED):
    """Analytic derivative of the active branch.

    At ``x == x0`` the ``RIGHT`` side reads the gain branch and ``LEFT`` the
    loss branch; ``TWO_SIDED`` raises :class:`KinkAt` there.
    """
    side = Side(side)
    xa = np.asarray(x, dtype=float)
    t = xa - p.x0
    at_kink = t == 0.0
    if side is Side.TWO_SIDED and np.any(at_kink):
        raise KinkAt(p.x0)
    use_gain = (t > 0.0) | (at_kink & (side is Side.RIGHT))
    out = np.empty_like(t)
    if np.any(use_gain):
        out[use_gain] = _branch_slope(p.lambda1, p.alpha, p.gamma1, p.m, t[use_gain])
    if not np.all(use_gain):
        out[~use_gain] = _branch_slope(p.lambda2, p.beta, p.gamma2, p.n, t[~use_gain])
    return _scalar_out(x, out)


def eval_curvature(p: CptParams, x):
    """Second derivative of the active branch (gain branch at ``x0``)."""
    xa = np.asarray(x, dtype=float)
    t = xa - p.x0
    gain = t >= 0.0
    out = np.empty_like(t)
    if np.any(gain):
        out[gain] = _branch_curvature(p.lambda1, p.alpha, p.gamma1, p.m, t[gain])
    if not np.all(gain):
        out[~gain] = _branch_curvature(p.lambda2, p.beta, p.gamma2, p.n, t[~gain])
    return _scalar_out(x, out)


def kink_jump(p: CptParams) -> float:
    """``u'(x0-) - u'(x0+)``, positive under loss aversion."""
    return p.loss_slope0 - p.gain_slope0


def decompose_u_r(p: CptParams, x):
    """Split ``u = U + R`` with ``U`` smooth at ``x0`` and ``R`` a hinge.

    Returns ``(U, R)``.
    """
    xa = np.asarray(x, dtype=float)
    u = np.asarray(eval_utility(p, xa), dtype=float)
    hinge = np.where(xa >= p.x0, kink_jump(p) * (xa - p.x0), 0.0)
    big_u = u + hinge
    r = -hinge
    if np.ndim(x) == 0:
        return float(big_u), float(r)
    return big_u, r


def smooth_part_slope(p: CptParams, x):
    """Derivative of ``U``; continuous at ``x0`` where it equals ``u'(x0-)``."""
    xa = np.asarray(x, dtype=float)
    d = np.asarray(eval_derivative(p, xa, Side.RIGHT), dtype=float)
    d = np.where(xa >= p.x0, d + kink_jump(p), d)
    return _scalar_out(x, d)


def _classify_side(lam, curv, gamma, mu, scale, *, gain, eps):
    if scale <= 0:
        return Shape.OTHER
    # a rate divisor tending to zero from the "flattening" side
    if gain and -eps < gamma < 0 and curv > 0 and lam * mu > 0:
        return Shape.CONSTANT
    if not gain and 0 < gamma < eps and curv > 0 and lam * mu < 0:
        return Shape.CONSTANT
    if lam / gamma >= 0:
        return Shape.OTHER
    if abs(curv) < eps:
        return Shape.LINEAR
    ratio = curv / gamma
    if gain:
        if ratio > 0 and mu <= 1:
            return Shape.CONVEX
        if ratio < 0 and mu >= 1:
            return Shape.CONCAVE
    else:
        if ratio > 0 and mu >= 1:
            return Shape.CONVEX
        if ratio < 0 and mu <= 1:
            return Shape.CONCAVE
    return Shape.OTHER


def classify_shape(p: CptParams, eps_limit: float = EPS_LIMIT) -> ShapeClass:
    """Gain/loss shape per the parameter-regime table; ``OTHER`` if none fits."""
    return ShapeClass(
        gain_shape=_classify_side(p.lambda1, p.alpha, p.gamma1, p.mu1, p.m, gain=True, eps=eps_limit),
        loss_shape=_classify_side(p.lambda2, p.beta, p.gamma2, p.mu2, p.n, gain=False, eps=eps_limit),
    )


def apply_pwf(w: Pwf, prob: float) -> float:
    if not 0.0 <= prob <= 1.0:
        raise ProbOutOfRange(f"probability {prob!r} outside [0, 1]")
    if w.kind is PwfKind.IDENTITY:
        return float(prob)
    d = w.delta
    num = prob**d
    return float(num / (num + (1.0 - prob) ** d) ** (1.0 / d))


@dataclass(frozen=True)
class ParamBank:
    """Column-stacked parameters of ``N`` agents.

    ``utility(x)`` with ``x`` of shape ``(N,)`` (or broadcastable, e.g.
    ``(G, N)``) performs the same per-element arithmetic as
    :func:`eval_utility`, so results agree bit for bit.
    """

    alpha: np.ndarray
    beta: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    m: np.ndarray
    n: np.ndarray
    x0: np.ndarray

    @classmethod
    def stack(cls, params):
        return cls(**{f.name: np.array([getattr(p, f.name) for p in params], dtype=float)
                      for f in fields(CptParams)})

    def utility(self, x):
        t = np.asarray(x, dtype=float) - self.x0
        gain = t >= 0.0
        g = _branch_value(self.lambda1, self.alpha, self.gamma1, self.mu1, self.m,
                          np.where(gain, t, 0.0))
        lo = _branch_value(self.lambda2, self.beta, self.gamma2, self.mu2, self.n,
                           np.where(gain, 0.0, t))
        return np.where(gain, g, lo)

    def derivative(self, x, side: Side = Side.RIGHT):
        """One-sided derivative; ``side`` only matters exactly at ``x0``."""
        t = np.asarray(x, dtype=float) - self.x0
        use_gain = (t > 0.0) | ((t == 0.0) & (Side(side) is Side.RIGHT))
        g = _branch_slope(self.lambda1, self.alpha, self.gamma1, self.m, np.where(use_gain, t, 0.0))
        lo = _branch_slope(self.lambda2, self.beta, self.gamma2, self.n, np.where(use_gain, 0.0, t))
        return np.where(use_gain, g, lo)
