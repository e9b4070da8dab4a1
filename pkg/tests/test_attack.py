from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grid_attack.attack import (
    FIRST_OPTIMUM,
    AttackSpec,
    build_problem,
    solve,
    target_state,
    verify_attack,
)
from grid_attack.errors import InfeasibleAttackError, InputError
from grid_attack.estimation import WeightModel, estimate
from grid_attack.experiment import Scenario
from grid_attack.network import build_jacobian, simulate_measurements
from grid_attack.topology import INCLUSION, TopologyError

from conftest import LOCKED_14


def wls_oracle(H, variances, z):
    w = 1.0 / np.sqrt(variances)
    return np.linalg.pinv(H * w[:, None]) @ (z * w)


@pytest.fixture(scope="module")
def scenario():
    return Scenario.load("ieee14_branch34")


@pytest.fixture(scope="module")
def branch34_setup(ieee14, scenario):
    spec = scenario.attack_spec(ieee14)
    R = WeightModel.uniform(54)
    z = simulate_measurements(ieee14, scenario.operating_state(ieee14), 0.01, 42)
    return spec, R, z


def test_target_state_matches_pinv_oracle(tri3):
    R = WeightModel.from_sigma([0.01, 0.02, 0.01, 0.03, 0.01, 0.02, 0.01, 0.02, 0.01])
    z = simulate_measurements(tri3, np.array([-0.1, -0.2]), 0.01, 3)
    err = TopologyError.between(tri3, 2, 3)
    H_e = build_jacobian(tri3, {err.branch: "open"}).matrix
    np.testing.assert_allclose(target_state(tri3, err, R, z),
                               wls_oracle(H_e, R.variances, z.values), atol=1e-12)


def test_target_state_moves_with_the_forged_topology(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    plain = estimate(build_jacobian(ieee14), R, z).state
    forged = target_state(ieee14, spec.error, R, z)
    assert np.max(np.abs(forged - plain)) > 1e-3


def test_bundled_scenario_contents(ieee14, scenario):
    spec = scenario.attack_spec(ieee14)
    assert ieee14.branches[spec.error.branch].label == "3-4"
    assert spec.error.kind == INCLUSION
    assert spec.epsilon == 0.8
    assert sorted(i + 1 for i in spec.locked) == LOCKED_14


def test_bundled_scenario_properties(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    result = solve(build_problem(spec, ieee14, R, z))
    ver = verify_attack(result, ieee14, R, spec)
    assert ver.locked_max_abs == 0.0
    assert ver.max_state_gap_deg < 0.01
    assert ver.residue_gap_inf <= spec.epsilon
    assert result.objective < 0.1
    assert ver.top_incident
    p = result.problem
    assert np.all(result.z_a >= p.lower) and np.all(result.z_a <= p.upper)
    assert result.kkt < 1e-6


def test_first_optimum_selection_is_also_optimal(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    a = solve(build_problem(spec, ieee14, R, z))
    b = solve(build_problem(replace(spec, selection=FIRST_OPTIMUM), ieee14, R, z))
    assert b.objective < 0.1
    assert abs(a.objective - b.objective) < 1e-6
    # least effort never moves more in L1 than the raw solver optimum
    assert np.abs(a.a).sum() <= np.abs(b.a).sum() + 1e-9


def test_vacuous_constraints_reach_consistency(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    free = AttackSpec(spec.error, epsilon=1e6, default_halfwidth=1e6)
    result = solve(build_problem(free, ieee14, R, z))
    assert result.objective < 1e-8
    p = result.problem
    # normal equations hold: H_t^T R^-1 z_a = (H_t^T R^-1 H_t) x_target
    np.testing.assert_allclose(p.operator @ result.z_a, p.rhs, atol=1e-8)


def test_all_locked_returns_the_snapshot(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    every = AttackSpec(spec.error, epsilon=1e6, locked=frozenset(range(54)))
    result = solve(build_problem(every, ieee14, R, z))
    np.testing.assert_array_equal(result.z_a, z.values)
    assert np.all(result.a == 0.0)
    H = build_jacobian(ieee14).matrix
    direct = np.linalg.norm(H.T @ (R.inv * z.values) - H.T @ (R.inv * (H @ result.problem.target_state)))
    assert result.objective == pytest.approx(direct, rel=1e-12)


def test_tight_epsilon_names_locked_meters(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    with pytest.raises(InfeasibleAttackError) as info:
        build_problem(replace(spec, epsilon=1e-9), ieee14, R, z)
    bad = set(info.value.indices)
    assert bad and bad <= set(LOCKED_14)


def test_out_of_range_locked_index(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    with pytest.raises(InputError, match="out of range"):
        build_problem(AttackSpec(spec.error, 0.8, locked=frozenset({54})), ieee14, R, z)


def test_spec_validation(ieee14):
    err = TopologyError(5)
    with pytest.raises(InputError):
        AttackSpec(err, epsilon=0.0)
    with pytest.raises(InputError):
        AttackSpec(err, epsilon=1.0, selection="cheapest")
    with pytest.raises(InputError):
        AttackSpec(err, epsilon=1.0, bound_overrides={0: (1.0, 0.0)})


def test_epsilon_override_is_respected(ieee14, branch34_setup):
    spec, R, z = branch34_setup
    loose = replace(spec, locked=frozenset(), epsilon_overrides={19: 0.05})
    result = solve(build_problem(loose, ieee14, R, z))
    p = result.problem
    assert abs(result.z_a[19] - p.residue_center[19]) <= 0.05 + 1e-12


def test_unconstrained_tri3_attack_reaches_target(tri3):
    R = WeightModel.uniform(9)
    z = simulate_measurements(tri3, np.array([-0.1, -0.2]), 0.01, 8)
    spec = AttackSpec(TopologyError.between(tri3, 1, 2), epsilon=1e6, default_halfwidth=1e6)
    result = solve(build_problem(spec, tri3, R, z))
    assert result.objective < 1e-8
    assert verify_attack(result, tri3, R, spec).max_state_gap_deg < 1e-6


def test_flowless_branch_needs_zero_attack(tri3):
    # equal angles at both ends: D x = 0, so the forged topology is already consistent
    x = np.array([-0.2, -0.2])
    R = WeightModel.uniform(9)
    z = simulate_measurements(tri3, x, 0.0, 0)
    spec = AttackSpec(TopologyError.between(tri3, 2, 3), epsilon=0.1)
    result = solve(build_problem(spec, tri3, R, z))
    ver = verify_attack(result, tri3, R, spec)
    assert np.max(np.abs(result.a)) < 1e-12
    assert result.objective < 1e-12
    assert ver.max_state_gap_deg < 1e-9
    assert ver.residue_gap_inf < 1e-12


@settings(max_examples=15, deadline=None)
@given(extra=st.floats(0.0, 1.0), drop=st.integers(0, 24))
def test_relaxation_never_increases_objective(ieee14, branch34_setup, extra, drop):
    spec, R, z = branch34_setup
    base = solve(build_problem(replace(spec, epsilon=0.3), ieee14, R, z)).objective
    locked = sorted(spec.locked)
    relaxed = replace(spec, epsilon=0.3 + extra, locked=frozenset(locked[:drop]),
                      default_halfwidth=2.0 + extra)
    assert solve(build_problem(relaxed, ieee14, R, z)).objective <= base + 1e-9


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.2, 2.0))
def test_solution_invariants(ieee14, scenario, seed, eps):
    spec = replace(scenario.attack_spec(ieee14), epsilon=eps)
    R = WeightModel.uniform(54)
    z = simulate_measurements(ieee14, scenario.operating_state(ieee14), 0.01, seed)
    try:
        problem = build_problem(spec, ieee14, R, z)
    except InfeasibleAttackError:
        return
    result = solve(problem)
    ver = verify_attack(result, ieee14, R, spec)
    assert np.all(result.a[sorted(spec.locked)] == 0.0)
    assert np.all(result.z_a >= problem.lower) and np.all(result.z_a <= problem.upper)
    assert ver.design_gap_inf <= eps + 1e-12
    h = np.array(result.history)
    assert np.all(np.diff(h) <= 1e-12 * max(1.0, h[0]))
