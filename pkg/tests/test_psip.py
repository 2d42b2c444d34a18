import math

import numpy as np
import pytest

from ccuc.buc import solve_buc
from ccuc.contingency import Contingency, check_feasibility, enumerate_contingencies
from ccuc.milp import BINARY, SolverOptions, Status, solve_milp
from ccuc.model import builtin_fixture, instance_from_dict, instance_to_dict
from ccuc.psip import (
    PRODUCTS,
    BigMPolicy,
    PsipError,
    PsipQuery,
    build_psip,
    solve_psip,
    verify_psip_against_enumeration,
)

from oracles import relaxed_recourse_value


def q(sol, j, t=0):
    return PsipQuery.from_solution(sol, j, t)


def test_k0_incumbent_worst_single_failure(sp, sol_k0):
    res = solve_psip(sp, q(sol_k0, 1))
    assert res.contingency == Contingency((0,))
    assert res.objective == pytest.approx(196.4, rel=1e-9)


def test_n1_incumbent_has_no_single_violation(sp, sol_k1):
    assert solve_psip(sp, q(sol_k1, 1)).objective == pytest.approx(0.0, abs=1e-6)


def test_n1_incumbent_fails_double(sp, sol_k1):
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.0])
    v = verify_psip_against_enumeration(inst, q(sol_k1, 2))
    assert v.psip_objective > 1.0
    assert v.matches
    assert len(v.values) == math.comb(13, 2)


@pytest.mark.parametrize("name", ["k0", "k1", "all_on"])
@pytest.mark.parametrize("j", [1, 2])
def test_matches_enumeration(sp, incumbents, name, j):
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.1])
    sol = incumbents[name]
    v = verify_psip_against_enumeration(inst, q(sol, j))
    assert v.matches, (v.psip_objective, v.enumerated_max, v.psip_contingency)


@pytest.mark.parametrize("name", ["k0", "k1"])
def test_highs_backend_agrees(sp, incumbents, name):
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.1])
    a = solve_psip(inst, q(incumbents[name], 2))
    b = solve_psip(inst, q(incumbents[name], 2), backend="highs")
    assert a.objective == pytest.approx(b.objective, rel=1e-6, abs=1e-6)


def test_dominates_every_specific_contingency(sp, sol_k0):
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.0])
    res = solve_psip(inst, q(sol_k0, 2))
    for c in enumerate_contingencies(inst, 2):
        ref = relaxed_recourse_value(inst, 0, sol_k0.x[:, 0], sol_k0.dispatch[:, 0], c.failed_gens, c.failed_lines)
        assert res.objective >= ref - 1e-6 * (1 + ref)


def test_monotone_in_budget(sp, sol_all_on):
    inst = sp.with_reliability(k=3, epsilon=[0.0, 0.0, 0.0])
    w = [solve_psip(inst, q(sol_all_on, j)).objective for j in (1, 2, 3)]
    assert w[0] <= w[1] + 1e-7 <= w[2] + 2e-7


def test_linearization_exact(sp, incumbents):
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.1])
    for sol in incumbents.values():
        for j in (1, 2):
            res = solve_psip(inst, q(sol, j))
            errs = res.product_errors()
            assert set(errs) == set(PRODUCTS)
            assert max(errs.values()) <= 1e-6
            assert res.contingency.size == j
            for cls in ("delta_hat", "delta_check", "gamma", "lambda_hat", "lambda_check", "zeta"):
                assert np.all(res.duals[cls] <= 1e-9)


def test_binary_count_experiment():
    inst = builtin_fixture("six_bus_experiment")
    _, sol, _ = solve_buc(inst.with_demand(inst.demand.loads[:, :1]), backend="highs")
    model = build_psip(inst.with_demand(inst.demand.loads[:, :1]), q(sol, 1), 1e4)
    binaries = [v for v in model.program.variables if v.kind == BINARY]
    assert len(binaries) == 16


def test_immune_elements_reduce_binaries(sp, sol_k0):
    d = instance_to_dict(sp)
    d["reliability"]["fail_immune"] = {"generators": [0], "lines": [0, 1]}
    inst = instance_from_dict(d)
    model = build_psip(inst, q(sol_k0, 1), 1e4)
    assert sum(v.kind == BINARY for v in model.program.variables) == 10
    res = solve_psip(inst, q(sol_k0, 1))
    assert 0 not in res.contingency.failed_gens


def test_budget_beyond_failable_elements(sp, sol_k0):
    d = instance_to_dict(sp)
    d["reliability"] = {"k": 2, "epsilon": [0.0, 0.0],
                        "fail_immune": {"generators": list(range(6)), "lines": list(range(6))}}
    inst = instance_from_dict(d)
    res = solve_psip(inst, q(sol_k0, 2))
    assert res.contingency is None and res.objective == 0.0
    model = build_psip(inst, q(sol_k0, 2), 1e4)
    assert solve_milp(model.program).status == Status.INFEASIBLE
    v = verify_psip_against_enumeration(inst, q(sol_k0, 2))
    assert v.matches and v.argmax == []


def test_query_validation(sp, sol_k0):
    with pytest.raises(ValueError):
        solve_psip(sp, PsipQuery(tuple(sol_k0.x[:, 0]), tuple(sol_k0.dispatch[:, 0]), 0))
    with pytest.raises(ValueError):
        solve_psip(sp, PsipQuery((1.0,), (0.0,), 1))
    with pytest.raises(ValueError):
        solve_psip(sp, q(sol_k0, 2))  # no eps_2 at k=1


def test_big_m_policy_validation():
    with pytest.raises(ValueError):
        BigMPolicy(initial=0.0)
    with pytest.raises(ValueError):
        BigMPolicy(growth=1.0)


def test_small_big_m_grows(sp, sol_k0):
    res = solve_psip(sp, q(sol_k0, 1), BigMPolicy(initial=0.05, max_retries=3))
    assert res.retries >= 1
    assert res.objective == pytest.approx(196.4, rel=1e-9)


def test_big_m_exhaustion_reported(sp, sol_k0):
    with pytest.raises(PsipError, match="binding classes"):
        solve_psip(sp, q(sol_k0, 1), BigMPolicy(initial=1e-3, growth=1.5, max_retries=1))


def test_result_dump(sp, sol_k0):
    d = solve_psip(sp, q(sol_k0, 1)).to_dict(sp)
    assert d["label"] == "{G1}" and set(d["U"]) >= {"alpha", "beta", "pi"}


def test_zero_w_means_no_violation(sp, sol_k1):
    res = solve_psip(sp, q(sol_k1, 1))
    assert res.objective <= 1e-6
    for c in enumerate_contingencies(sp, 1):
        assert check_feasibility(sp, sol_k1.x[:, 0], sol_k1.dispatch[:, 0], c, 0).feasible
