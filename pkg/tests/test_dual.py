import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cptsca.dual import (
    DualConfig,
    DualSubgradientSolver,
    Subproblem,
    dual_ascent,
    dual_step,
    inner_minimize,
    lagrangian,
    project_nonneg,
)
from cptsca.errors import BudgetExhausted, Diverged
from cptsca.scenario import ScenarioSpec, generate_scenario
from cptsca.sca import build_bank
from cptsca.surrogate import SurrogateBank

from conftest import exp_concave, finite, make_problem


def piece_bank(lam, rate=-1.0, n=1, breakpoint=0.0):
    col = lambda v: np.full(n, float(v))  # noqa: E731
    piece = (col(lam), col(rate), col(0.0), col(1.0), col(0.0))
    return SurrogateBank(piece, piece, col(breakpoint), col(0.0), col(0.0))


def test_project_nonneg_examples():
    assert np.array_equal(project_nonneg([-1, 2, 0.5]), [0, 2, 0.5])
    v = np.array([0.0, 3.0, 1e-9])
    assert np.array_equal(project_nonneg(v), v)


@settings(max_examples=100)
@given(arrays(float, 5, elements=st.floats(-1e3, 1e3, **finite)),
       arrays(float, 5, elements=st.floats(-1e3, 1e3, **finite)))
def test_projection_is_nonexpansive(a, b):
    assert np.linalg.norm(project_nonneg(a) - project_nonneg(b)) <= np.linalg.norm(a - b) + 1e-12


def test_lagrangian_examples():
    prob = make_problem([exp_concave()] * 3, p_total=10.0)
    zero = piece_bank(0.0, n=3)
    assert lagrangian(zero, prob, np.array([1.0, 2.0, 3.0]), 1.0) == -4.0
    bank = build_bank(prob, prob.equal_split())
    P = np.array([0.5, 1.0, 2.0])
    f_surr = lagrangian(bank, prob, P, 0.0)
    assert lagrangian(bank, prob, P, 2.5) - f_surr == pytest.approx(2.5 * prob.constraint(P), abs=1e-12)
    with pytest.raises(ValueError):
        lagrangian(bank, prob, P, -1.0)


def test_dual_step_examples():
    assert dual_step(0.5, 0.1, -4.0) == pytest.approx(0.1)
    assert dual_step(0.1, 0.1, -4.0) == 0.0


@pytest.mark.parametrize("scaling", ["curvature", "none"])
@pytest.mark.parametrize("k", [0.05, 0.25, 0.6, 1.0])
def test_inner_minimizer_closed_form(k, scaling):
    prob = make_problem([exp_concave()], p_total=10.0)
    bank = piece_bank(-1.0)  # slope exp(-x)
    cfg = DualConfig(scaling=scaling, max_primal_iters=20000)
    res = inner_minimize(bank, prob, k, cfg)
    tol = 1e-6 if scaling == "curvature" else 1e-3
    assert res.P[0] == pytest.approx(math.log(1.0 / k), abs=tol)


def test_huge_price_clamps_to_zero():
    prob = make_problem([exp_concave()] * 4, p_total=2.0)
    res = inner_minimize(build_bank(prob, prob.equal_split()), prob, 1e8)
    assert np.all(res.P == 0.0)


def test_inner_value_is_a_global_minimum(rng):
    prob = generate_scenario(ScenarioSpec(5, seed=7))
    bank = build_bank(prob, prob.equal_split())
    for k in (0.0, 0.3, 3.0, 30.0):
        res = inner_minimize(bank, prob, k)
        P = rng.dirichlet(np.ones(6), size=100)[:, :5] * prob.p_total
        L = [lagrangian(bank, prob, Pi, k) for Pi in P]
        assert res.L <= min(L) + 1e-4 * (1 + abs(res.L))
        assert res.L == pytest.approx(lagrangian(bank, prob, res.P, k), abs=1e-9)


def test_divergence_detected_without_box():
    prob = make_problem([exp_concave()], p_total=1.0)
    flat_up = piece_bank(-1.0, rate=-1e-12)  # linear, unbounded increasing
    cfg = DualConfig(box=False, scaling="none", divergence_cap=10.0)
    with pytest.raises(Diverged):
        inner_minimize(flat_up, prob, 0.0, cfg)


def test_symmetric_price_closed_form():
    noise = 0.5
    prob = make_problem([exp_concave()] * 3, noise=noise, p_total=1.0)
    bank = build_bank(prob, np.array([0.2, 0.3, 0.1]))
    res = dual_ascent(bank, prob)
    c = 1.0 / noise
    k_star = c * math.exp(-c * prob.p_total / 3)  # marginal utility at the equal split
    assert res.status == "converged"
    assert res.k == pytest.approx(k_star, rel=1e-6)
    assert np.allclose(res.P, prob.p_total / 3, atol=1e-7)
    assert abs(res.g) <= 1e-6 * prob.p_total


@pytest.mark.parametrize("seed", range(6))
def test_duality_invariants(seed):
    prob = generate_scenario(ScenarioSpec(8, sampler="mixed", seed=seed))
    bank = build_bank(prob, prob.equal_split())
    res = dual_ascent(bank, prob)
    h = res.history
    assert np.all(h["k"] >= 0)
    feas = h["f_feasible"][np.isfinite(h["f_feasible"])]
    for hk in h["h"]:
        assert np.all(hk <= feas + 1e-9 * (1 + np.abs(feas)))
    assert res.weak_duality_margin >= -1e-9
    assert abs(res.gap) <= 1e-4 * (1 + abs(res.f_surr))
    assert res.g <= 1e-6 * prob.p_total
    assert np.all(res.P >= -1e-12) and prob.constraint(res.P) <= 1e-12


def test_dual_function_is_concave(rng):
    prob = generate_scenario(ScenarioSpec(6, seed=11))
    sub = Subproblem(build_bank(prob, prob.equal_split()), prob)
    h = lambda k: inner_minimize(sub, prob, k).L  # noqa: E731
    for _ in range(15):
        k1, k2, k3 = np.sort(rng.uniform(0, 20, 3))
        t = (k2 - k1) / (k3 - k1)
        assert h(k2) >= (1 - t) * h(k1) + t * h(k3) - 1e-6


def test_pure_subgradient_update_when_unscaled():
    prob = generate_scenario(ScenarioSpec(4, seed=2))
    bank = build_bank(prob, prob.equal_split())
    cfg = DualConfig(scaling="none", max_dual_iters=5, k_init=0.3)
    with pytest.raises(BudgetExhausted) as err:
        dual_ascent(bank, prob, cfg)
    hist = err.value.result.history
    for i in range(len(hist["k"]) - 1):
        assert hist["k"][i + 1] == max(hist["k"][i] + cfg.zeta(i) * hist["g"][i], 0.0)


def test_budget_exhaustion_carries_feasible_pair():
    prob = generate_scenario(ScenarioSpec(10, seed=5))
    bank = build_bank(prob, prob.equal_split())
    with pytest.raises(BudgetExhausted) as err:
        dual_ascent(bank, prob, DualConfig(max_dual_iters=1, k_init=1e-6))
    res = err.value.result
    assert res.status == "budget"
    assert prob.constraint(res.P) <= 1e-12 and np.all(res.P >= 0)


def test_solver_callable_warm_start_matches_direct_call():
    prob = generate_scenario(ScenarioSpec(5, seed=9))
    bank = build_bank(prob, prob.equal_split())
    a = DualSubgradientSolver()(bank, prob, 2.0, prob.equal_split())
    b = dual_ascent(bank, prob, DualConfig(), k_start=2.0, P_start=prob.equal_split())
    assert np.array_equal(a.P, b.P) and a.k == b.k
