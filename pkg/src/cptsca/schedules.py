"""Step-size schedules for the outer blend and the dual/primal subgradient loops."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Harmonic:
    """``theta0 / (1 + c * l)``: diverging sum, finite sum of squares."""

    theta0: float = 1.0
    c: float = 0.1

    def __post_init__(self):
        if self.theta0 <= 0 or self.c <= 0:
            raise ValueError("Harmonic schedule needs theta0 > 0 and c > 0")

    def __call__(self, l: int) -> float:
        return self.theta0 / (1.0 + self.c * l)


@dataclass(frozen=True)
class Power:
    """``theta0 / (1 + l) ** exponent`` with ``exponent`` in (0, 1]."""

    theta0: float = 1.0
    exponent: float = 0.6

    def __post_init__(self):
        if self.theta0 <= 0 or not 0.0 < self.exponent <= 1.0:
            raise ValueError("Power schedule needs theta0 > 0 and exponent in (0, 1]")

    def __call__(self, l: int) -> float:
        return self.theta0 / (1.0 + l) ** self.exponent


@dataclass(frozen=True)
class Constant1:
    """Unit step every iteration (majorization-minimization mode)."""

    def __call__(self, l: int) -> float:
        return 1.0


def square_summable(schedule) -> bool:
    """True when the schedule's squares sum to a finite value."""
    if isinstance(schedule, Harmonic):
        return True
    if isinstance(schedule, Power):
        return schedule.exponent > 0.5
    return False


def schedule_from_dict(d):
    kind = d.get("kind", "harmonic").lower()
    if kind == "harmonic":
        return Harmonic(float(d.get("theta0", 1.0)), float(d.get("c", 0.1)))
    if kind == "power":
        return Power(float(d.get("theta0", 1.0)), float(d.get("exponent", 0.6)))
    if kind in ("constant1", "constant"):
        return Constant1()
    raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_to_dict(s):
    if isinstance(s, Harmonic):
        return {"kind": "harmonic", "theta0": s.theta0, "c": s.c}
    if isinstance(s, Power):
        return {"kind": "power", "theta0": s.theta0, "exponent": s.exponent}
    return {"kind": "constant1"}
