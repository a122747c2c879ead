"""Power-allocation instances: agents, budget, objective, and random generation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import BadSpec, DimensionMismatch
from .utility import (
    CptParams,
    ParamBank,
    Pwf,
    PwfKind,
    Shape,
    apply_pwf,
    classify_shape,
    validate_params,
)


@dataclass(frozen=True)
class Agent:
    """One receiver: CPT preferences over SNR, channel power gain, activity probability."""

    params: CptParams
    gain: float
    prob: float = 1.0

    def __post_init__(self):
        if not self.gain > 0:
            raise BadSpec(f"channel gain must be positive, got {self.gain!r}")
        if not 0.0 <= self.prob <= 1.0:
            raise BadSpec(f"activity probability must lie in [0, 1], got {self.prob!r}")
        validate_params(self.params)


@dataclass(frozen=True)
class AllocationProblem:
    agents: tuple
    noise_var: float
    p_total: float
    pwf: Pwf = field(default_factory=Pwf)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise BadSpec("an allocation problem needs at least one agent")
        if not self.noise_var > 0:
            raise BadSpec("noise variance must be positive")
        if not self.p_total > 0:
            raise BadSpec("power budget must be positive")

    @property
    def size(self):
        return len(self.agents)

    @cached_property
    def snr_scale(self):
        """Per-agent ``|h|^2 / sigma^2``: SNR obtained per unit of power."""
        return np.array([a.gain for a in self.agents], dtype=float) / self.noise_var

    @cached_property
    def weights(self):
        return np.array([apply_pwf(self.pwf, a.prob) for a in self.agents], dtype=float)

    @cached_property
    def bank(self):
        return ParamBank.stack([a.params for a in self.agents])

    def equal_split(self):
        return np.full(self.size, self.p_total / self.size)

    def constraint(self, P):
        """Budget slack ``sum(P) - p_total`` (feasible when <= 0)."""
        return float(np.sum(P)) - self.p_total

    def to_dict(self):
        return {
            "noise_var": self.noise_var,
            "p_total": self.p_total,
            "pwf": {"kind": self.pwf.kind.value, "delta": self.pwf.delta},
            "agents": [{"params": a.params.to_dict(), "gain": a.gain, "prob": a.prob}
                       for a in self.agents],
        }

    @classmethod
    def from_dict(cls, d):
        agents = [Agent(CptParams.from_dict(a["params"]), float(a["gain"]),
                        float(a.get("prob", 1.0))) for a in d["agents"]]
        pw = d.get("pwf", {})
        return cls(tuple(agents), float(d["noise_var"]), float(d["p_total"]),
                   Pwf(PwfKind(pw.get("kind", "identity")), float(pw.get("delta", 0.65))))


def snr(P, gain, noise_var):
    return P * gain / noise_var


def objective(problem: AllocationProblem, P) -> float:
    """``-sum_i w(p_i) u_i(SNR_i)``, to be minimized.

    The sum is taken with :func:`math.fsum`, so it does not depend on the
    summation order.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (problem.size,):
        raise DimensionMismatch(f"allocation has shape {P.shape}, expected ({problem.size},)")
    u = problem.bank.utility(P * problem.snr_scale)
    return -math.fsum(problem.weights * u)


def objective_batch(problem: AllocationProblem, P):
    """Objective for a stack of allocations ``P`` of shape ``(G, N)`` (plain sums)."""
    P = np.asarray(P, dtype=float)
    u = problem.bank.utility(P * problem.snr_scale)
    return -(u * problem.weights).sum(axis=-1)


def save_problem(problem: AllocationProblem, path, spec=None):
    payload = {"format": "cptsca-instance/1", "problem": problem.to_dict()}
    if spec is not None:
        payload["spec"] = asdict(spec)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_problem(path) -> AllocationProblem:
    payload = json.loads(Path(path).read_text())
    return AllocationProblem.from_dict(payload.get("problem", payload))


# --- random instances -------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    n_agents: int
    mean_snr_db: float = 7.0
    p_total: float = 1.0
    sampler: str = "s-shaped"
    seed: int = 0

    def validate(self):
        if not (isinstance(self.n_agents, (int, np.integer)) and self.n_agents >= 1):
            raise BadSpec("n_agents must be a positive integer")
        if not self.p_total > 0:
            raise BadSpec("p_total must be positive")
        if not math.isfinite(self.mean_snr_db):
            raise BadSpec("mean_snr_db must be finite")
        if self.sampler not in SAMPLERS:
            raise BadSpec(f"unknown sampler {self.sampler!r}; choose from {sorted(SAMPLERS)}")
        if not 0 <= int(self.seed) < 2**64:
            raise BadSpec("seed must be a 64-bit unsigned integer")


def _side(rng, shape, *, slope, span):
    """Draw one branch as (curvature driver, scale, rate divisor, abscissa scale).

    ``slope`` is the target derivative at the reference point, so the branch
    scale ``lambda`` follows from it. The curvature is set so the exponent
    changes by 0.5 to 3 over ``span`` (the SNR range the branch can see),
    which keeps values finite for any budget.
    """
    scale = rng.uniform(1.0, 4.0)
    divisor = rng.uniform(0.5, 1.5)
    curv = rng.uniform(0.5, 3.0) * divisor * scale / span
    # curv > 0 throughout, so the divisor's sign alone sets the shape
    if shape is Shape.CONCAVE:
        divisor = -divisor
    lam = -slope * divisor * scale
    return curv, lam, divisor, scale


def _draw_params(rng, mean_snr, reach, gain_shape, loss_shape):
    gain_slope = rng.uniform(0.5, 1.5)
    loss_slope = gain_slope * rng.uniform(1.5, 3.0)
    x0 = rng.uniform(0.5, 2.0) * mean_snr
    alpha, lambda1, gamma1, m = _side(rng, gain_shape, slope=gain_slope,
                                      span=max(reach - x0, mean_snr))
    beta, lambda2, gamma2, n = _side(rng, loss_shape, slope=loss_slope, span=x0)
    return CptParams(alpha, beta, lambda1, lambda2, gamma1, gamma2, 1.0, 1.0, m, n, x0)


def _sample_s_shaped(rng, reach, mean_snr):
    return [_draw_params(rng, mean_snr, r, Shape.CONCAVE, Shape.CONVEX) for r in reach]


def _sample_concave(rng, reach, mean_snr):
    return [_draw_params(rng, mean_snr, r, Shape.CONCAVE, Shape.CONCAVE) for r in reach]


def _sample_mixed(rng, reach, mean_snr):
    out = []
    for r in reach:
        g = Shape.CONVEX if rng.random() < 0.5 else Shape.CONCAVE
        lo = Shape.CONVEX if rng.random() < 0.5 else Shape.CONCAVE
        out.append(_draw_params(rng, mean_snr, r, g, lo))
    return out


SAMPLERS = {
    "s-shaped": _sample_s_shaped,
    "concave": _sample_concave,
    "mixed": _sample_mixed,
}

# Branch shapes each sampler promises: (gain shapes, loss shapes).
SAMPLER_REGIMES = {
    "s-shaped": ({Shape.CONCAVE}, {Shape.CONVEX}),
    "concave": ({Shape.CONCAVE}, {Shape.CONCAVE}),
    "mixed": ({Shape.CONCAVE, Shape.CONVEX}, {Shape.CONCAVE, Shape.CONVEX}),
}


def noise_for_mean_snr(p_total, n_agents, mean_snr_db, mean_gain=1.0):
    """Noise variance making the equal-split SNR average to ``mean_snr_db``."""
    return (p_total / n_agents) * mean_gain / 10.0 ** (mean_snr_db / 10.0)


def generate_scenario(spec: ScenarioSpec) -> AllocationProblem:
    """Random instance: unit-mean exponential gains, calibrated noise, sampled CPT agents."""
    spec.validate()
    rng = np.random.default_rng(int(spec.seed))
    gains = rng.exponential(1.0, size=spec.n_agents)
    mean_snr = 10.0 ** (spec.mean_snr_db / 10.0)
    noise = noise_for_mean_snr(spec.p_total, spec.n_agents, spec.mean_snr_db)
    reach = gains * spec.p_total / noise  # SNR with the whole budget
    params = SAMPLERS[spec.sampler](rng, reach, mean_snr)
    agents = tuple(Agent(p, float(g)) for p, g in zip(params, gains))
    return AllocationProblem(agents, noise, spec.p_total)


def sampler_regimes_hold(problem: AllocationProblem, sampler: str) -> bool:
    gains_ok, losses_ok = SAMPLER_REGIMES[sampler]
    for a in problem.agents:
        sc = classify_shape(a.params)
        if sc.gain_shape not in gains_ok or sc.loss_shape not in losses_ok:
            return False
    return True
