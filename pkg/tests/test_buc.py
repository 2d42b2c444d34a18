import itertools
from dataclasses import replace

import numpy as np
import pytest

from ccuc.buc import (
    CommitmentSolution,
    CutPool,
    InternalConsistencyError,
    build_master,
    dispatch_violations,
    extract_solution,
    solve_buc,
    verify_commitment_constraints,
)
from ccuc.contingency import check_feasibility, enumerate_contingencies, make_cut
from ccuc.milp import SolverOptions, Status
from ccuc.model import builtin_fixture, instance_from_dict, instance_to_dict

from oracles import ccuc_single_period

EXACT = SolverOptions(rel_gap=1e-9)




def test_k0_commits_g1(sp):
    status, sol, _ = solve_buc(sp, EXACT)
    assert status == Status.OPTIMAL
    assert sol.committed() == (0,)
    assert sol.dispatch[0, 0] == pytest.approx(196.4, abs=1e-6)
    assert sol.objective == pytest.approx(125 + 13.51 * 196.4, rel=1e-6)
    assert sol.angles[sp.system.reference_bus, 0] == 0.0


def test_k0_matches_brute_force(sp):
    ref_cost, ref_set, _ = ccuc_single_period(sp, ())
    _, sol, _ = solve_buc(sp, EXACT)
    assert sol.objective == pytest.approx(ref_cost, rel=1e-7)
    assert sol.committed() == ref_set


@pytest.mark.parametrize("scale", [0.3, 0.6, 1.2, 1.6, 2.1])
def test_k0_scaled_demand_matches_oracle(sp, scale):
    inst = sp.with_demand(sp.demand.loads * scale)
    ref = ccuc_single_period(inst, ())
    status, sol, _ = solve_buc(inst, EXACT)
    if ref is None:
        assert status == Status.INFEASIBLE
    else:
        assert sol.objective == pytest.approx(ref[0], rel=1e-7)


def test_enumerated_commitments_never_beat_master(sp):
    # every on/off pattern with a feasible dispatch costs at least the master optimum
    _, sol, _ = solve_buc(sp, EXACT)
    best = np.inf
    for pattern in itertools.product((0, 1), repeat=sp.system.num_generators):
        d = instance_to_dict(sp)
        for g, on in zip(d["generators"], pattern):
            if not on:
                g["p_max"] = 0.0
                g["p_min"] = 0.0
                g["cost_startup"] = 0.0
        inst = instance_from_dict(d)
        status, s, _ = solve_buc(inst, EXACT)
        if status == Status.OPTIMAL:
            best = min(best, s.objective + sum(
                sp.system.generators[g].cost_startup for g in range(6) if pattern[g] and s.x[g, 0] < 0.5))
    assert best >= sol.objective - 1e-6
    assert best == pytest.approx(sol.objective, rel=1e-7)


def test_infeasible_when_demand_exceeds_capacity(sp):
    inst = sp.with_demand(sp.demand.loads * 10)
    status, sol, _ = solve_buc(inst)
    assert status == Status.INFEASIBLE and sol is None


def test_zero_demand_costs_nothing(sp):
    inst = sp.with_demand(np.zeros_like(sp.demand.loads))
    _, sol, _ = solve_buc(inst)
    assert sol.objective == 0.0 and sol.committed() == ()


def test_cut_loop_over_single_failures_gives_five_units(sp):
    pool = CutPool()
    master = build_master(sp, pool)
    conts = list(enumerate_contingencies(sp, 1))
    assert len(conts) == 13
    for _ in range(50):
        master.sync(pool)
        res = master.solve(EXACT)
        sol = extract_solution(res, sp, master)
        new = 0
        for c in conts:
            chk = check_feasibility(sp, sol.x[:, 0], sol.dispatch[:, 0], c, 0)
            if not chk.feasible:
                new += pool.add(make_cut(chk, sp))
        if new == 0:
            break
    assert sol.committed() == (0, 2, 3, 4, 5)
    for cut in pool:
        assert cut.evaluate(sol.x[:, 0], sol.dispatch[:, 0]) <= 1e-6 * (1 + sp.demand.total(0))


def test_cut_pool_dedup(sp):
    _, sol, _ = solve_buc(sp, EXACT)
    c = next(iter(enumerate_contingencies(sp, 1)))
    cut = make_cut(check_feasibility(sp, sol.x[:, 0], sol.dispatch[:, 0], c, 0), sp)
    pool = CutPool()
    assert pool.add(cut, 1) and not pool.add(cut, 2)
    assert len(pool) == 1 and cut in pool
    assert pool.origin[0] == (c, 0, 1)


def test_corrupted_incumbent_rejected(sp):
    master = build_master(sp)
    res = master.solve(EXACT)
    x = res.x.copy()
    x[master.p[0][0].index] -= 30.0  # breaks bus balance
    with pytest.raises(InternalConsistencyError):
        extract_solution(replace(res, x=x), sp, master)


def test_solution_json_round_trip(sp):
    _, sol, _ = solve_buc(sp, EXACT)
    again = CommitmentSolution.from_dict(sol.to_dict(sp))
    assert np.array_equal(again.x, sol.x) and np.allclose(again.dispatch, sol.dispatch)
    assert again.objective == sol.objective
    assert sol.to_dict(sp)["committed"] == [["G1"]]


def _horizon(min_up=1, min_down=1, init_up=0, init_down=0, T=6):
    d = instance_to_dict(builtin_fixture("six_bus_example"))
    d["demand"]["periods"] = T
    d["demand"]["loads"] = {k: v[:T] for k, v in d["demand"]["loads"].items()}
    d["generators"][1].update(min_up=min_up, min_down=min_down, init_up=init_up, init_down=init_down)
    return instance_from_dict(d)


def test_min_up_violation_reported():
    inst = _horizon(min_up=3)
    x = np.zeros((6, 6))
    x[0] = 1
    x[1, 2] = 1  # one period only
    fams = {(v.family, v.generator) for v in verify_commitment_constraints(x, inst)}
    assert ("min_up", 1) in fams


def test_min_down_violation_reported():
    inst = _horizon(min_down=3)
    x = np.zeros((6, 6))
    x[1] = [1, 1, 0, 1, 1, 1]
    fams = {(v.family, v.generator) for v in verify_commitment_constraints(x, inst)}
    assert ("min_down", 1) in fams


def test_initial_online_violation():
    inst = _horizon(init_up=2)
    x = np.zeros((6, 6))
    x[1] = [1, 0, 1, 1, 1, 1]
    fams = {(v.family, v.generator, v.period) for v in verify_commitment_constraints(x, inst)}
    assert ("init_online", 1, 1) in fams


def test_initial_offline_violation():
    inst = _horizon(init_down=2)
    x = np.zeros((6, 6))
    x[1, 0] = 1
    assert any(v.family == "init_offline" for v in verify_commitment_constraints(x, inst))


def test_end_window_clamped():
    inst = _horizon(min_up=4)
    x = np.zeros((6, 6))
    x[1, 4:] = 1  # starts two periods before the horizon ends: allowed
    assert verify_commitment_constraints(x, inst) == []
    x[1, 5] = 0
    assert any(v.family == "min_up_end" for v in verify_commitment_constraints(x, inst))


def test_multi_period_master_respects_windows():
    inst = _horizon(min_up=3, min_down=2, T=8)
    status, sol, _ = solve_buc(inst, SolverOptions(rel_gap=1e-6), backend="highs")
    assert status == Status.OPTIMAL
    assert verify_commitment_constraints(sol.x, inst) == []
    assert dispatch_violations(sol, inst, 1e-6) == []


def test_horizon_shorter_than_obligation():
    from ccuc.model import InstanceValidationError
    with pytest.raises(InstanceValidationError):
        _horizon(init_up=7, T=6)


def test_lp_dump_of_master(sp):
    text = build_master(sp).program.write_lp()
    assert "balance" in text and "Binaries" in text
