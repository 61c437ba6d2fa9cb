import os

import numpy as np
import pytest

from acoe_lab.average import (
    VanishingSchedule,
    acoe_residual,
    acoe_rhs,
    equicontinuity_modulus,
    h_function,
    local_slope,
    two_actions_at_s,
    vanishing_discount,
    verify_acoi,
)
from acoe_lab.dp import Lattice, ValueTable
from acoe_lab.errors import InvalidInstanceError
from acoe_lab.inventory import DemandPMF, InventoryParams, PiecewiseLinear
from acoe_lab.policy import check_k_convex, modified_policy_at_s, policy_to_tabular

import oracles


def tiny_instance():
    return InventoryParams(
        2.0, 1.0, PiecewiseLinear.two_sided(2.0, 3.0), DemandPMF([0.0, 1.0], [0.4, 0.6]), Lattice.from_bounds(-6, 8, 1)
    )


def test_schedule_validation(params_a):
    with pytest.raises(InvalidInstanceError):
        VanishingSchedule(())
    with pytest.raises(InvalidInstanceError, match="increasing"):
        VanishingSchedule((0.9, 0.8))
    with pytest.raises(InvalidInstanceError, match=r"\[0, 1\)"):
        VanishingSchedule((0.9, 1.0))
    high = InventoryParams(
        0.0, 1.0, PiecewiseLinear.two_sided(1.0, 0.5), params_a.demand, params_a.lattice
    )  # alpha* = 0.5
    with pytest.raises(InvalidInstanceError, match="alpha"):
        VanishingSchedule((0.4, 0.9)).check_threshold(high)
    VanishingSchedule((0.6, 0.9)).check_threshold(high)


def test_default_schedule_clears_threshold(params_a):
    sch = VanishingSchedule.default_for(params_a)
    assert sch.alphas[0] > -2.0 and sch.alphas[-1] < 1.0
    assert list(sch.alphas) == sorted(sch.alphas)


def test_solution_shape(solution_a, params_a):
    sol = solution_a
    assert (sol.policy.s, sol.policy.S) == (0.0, 3.0)
    assert len(sol.w_sequence) == 4 and sol.w == pytest.approx(sol.w_sequence[-1])
    assert sol.u_tilde.values.min() == 0.0
    assert not sol.warnings


def test_w_sequence_settles(solution_a):
    w = np.array(solution_a.w_sequence)
    gaps = np.abs(w[:-1] - w[-1])
    assert np.all(np.diff(gaps) < 0)


def test_single_alpha_warns(params_a):
    sol = vanishing_discount(params_a, (0.9,), dp_tol=1e-6)
    assert any("single" in w for w in sol.warnings)


def test_threaded_matches_serial(params_a, monkeypatch):
    serial = vanishing_discount(params_a, (0.9, 0.95), dp_tol=1e-6)
    monkeypatch.setenv("ACOE_LAB_THREADS", "2")
    threaded = vanishing_discount(params_a, (0.9, 0.95), dp_tol=1e-6)
    assert threaded.w == serial.w
    np.testing.assert_array_equal(threaded.u_tilde.values, serial.u_tilde.values)


def test_h_function_by_hand(params_a, solution_a):
    H = solution_a.H
    u = solution_a.u_tilde
    for x in (-5.0, 0.0, 2.0, 10.0):
        Eu = sum(p * float(u(x - d)) for d, p in zip(params_a.demand.support, params_a.demand.probs))
        Eh = sum(p * oracles.h_val(params_a, x - d) for d, p in zip(params_a.demand.support, params_a.demand.probs))
        assert float(H(x)) == pytest.approx(x + Eh + Eu, abs=1e-9)


def test_acoe_rhs_by_hand(params_a, solution_a):
    H = solution_a.H.values
    rhs = acoe_rhs(params_a, solution_a.H)
    x = params_a.lattice.points
    for i in (3, 20, 40, 60):
        expected = min(params_a.K + H[i:].min(), H[i]) - x[i]
        assert rhs[i] == pytest.approx(expected)


def test_structure_of_average_solution(solution_a, params_a):
    assert check_k_convex(solution_a.u_tilde, params_a.K).is_k_convex
    assert check_k_convex(solution_a.H, params_a.K).is_k_convex
    pol = solution_a.policy
    gap = two_actions_at_s(solution_a.H, pol, params_a.K)
    assert gap <= local_slope(solution_a.H, pol.s) * params_a.lattice.step


def test_acoi_both_policies(solution_a, params_a):
    sol = solution_a
    lat = params_a.lattice
    gap = two_actions_at_s(sol.H, sol.policy, params_a.K)
    assert verify_acoi(params_a, sol.w, sol.u_tilde, policy_to_tabular(sol.policy, lat)) <= sol.acoe_residual + 1e-9
    assert verify_acoi(params_a, sol.w, sol.u_tilde, modified_policy_at_s(sol.policy, lat)) <= sol.acoe_residual + gap + 1e-9


def test_acoe_residual_is_of_order_one_minus_alpha(solution_a, params_a):
    # the residual is dominated by (1 - alpha_N) u~ far from the minimiser
    res, arg = solution_a.acoe_residual, solution_a.acoe_argmax
    scale = (1 - solution_a.alphas[-1]) * (1 + solution_a.u_tilde.values.max())
    assert res <= scale
    assert arg > solution_a.policy.S


def test_equicontinuity_modulus_examples():
    lat = Lattice.from_bounds(0, 4, 1)
    a = ValueTable(lat, [0, 1, 3, 6, 10])
    b = ValueTable(lat, [0, 0, 0, 0, 1])
    assert equicontinuity_modulus([a, b], 1.0) == 4.0
    assert equicontinuity_modulus([a], 2.0) == 7.0
    with pytest.raises(ValueError):
        equicontinuity_modulus([a], 0.0)


def test_tiny_instance_against_relative_value_iteration():
    tiny = tiny_instance()
    g, u0 = oracles.relative_value_iteration(tiny)
    sol = vanishing_discount(tiny, (0.9, 0.99, 0.999, 0.9999, 0.99999, 0.999999), dp_tol=1e-6)
    assert abs(sol.w - g) <= 1e-4
    d = sol.u_tilde.values - u0
    assert np.max(np.abs(d - 0.5 * (d.max() + d.min()))) <= 1e-3


def test_margin_override(solution_a, params_a):
    full, _ = acoe_residual(params_a, solution_a.w, solution_a.u_tilde, solution_a.H, margin=0)
    inner, _ = acoe_residual(params_a, solution_a.w, solution_a.u_tilde, solution_a.H)
    assert full >= inner


def test_average_policy_is_optimal_among_ss_pairs(solution_a, params_a):
    # exact stationary costs of nearby (s, S) pairs; the extracted pair is the best
    best = oracles.ss_average_cost(params_a, solution_a.policy.s, solution_a.policy.S)
    for s in range(-3, 3):
        for S in range(max(s, 0), 7):
            assert oracles.ss_average_cost(params_a, float(s), float(S)) >= best - 1e-12
    assert abs(solution_a.w - best) <= 1e-3
