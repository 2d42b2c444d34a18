import itertools

import numpy as np
import pytest

from ccuc.contingency import (
    NO_FAILURE,
    Contingency,
    CutPreconditionError,
    DynamicContingencyList,
    build_relaxed_cf,
    check_feasibility,
    count_contingencies,
    direct_recourse_feasible,
    enumerate_contingencies,
    instance_contingency_count,
    make_cut,
    screen_list,
    violation_tolerance,
)
from ccuc.milp import solve_lp
from ccuc.model import builtin_fixture, instance_from_dict, instance_to_dict

from oracles import relaxed_recourse_value

G1 = Contingency((0,))
L1 = Contingency((), (0,))


@pytest.mark.parametrize("g, e, k, expected", [
    (9, 7, 1, 16), (9, 7, 2, 136), (9, 7, 3, 696),
    (32, 38, 1, 70), (32, 38, 2, 2485), (32, 38, 3, 57225),
    (113, 127, 1, 240), (113, 127, 2, 28920), (113, 127, 3, 2304200),
    (5, 5, 0, 0),
])
def test_counts(g, e, k, expected):
    assert count_contingencies(g, e, k) == expected


def test_count_rejects_negative():
    with pytest.raises(ValueError):
        count_contingencies(-1, 3, 1)


def test_experiment_enumeration():
    inst = builtin_fixture("six_bus_experiment")
    seen = set()
    cum = []
    for j in (1, 2, 3):
        batch = list(enumerate_contingencies(inst, j))
        assert all(c.size == j for c in batch)
        seen.update(batch)
        cum.append(len(seen))
    assert cum == [16, 136, 696]
    assert instance_contingency_count(inst) == 696


def test_enumeration_order_deterministic(sp):
    a = list(enumerate_contingencies(sp, 2))
    b = list(enumerate_contingencies(sp, 2))
    assert a == b
    assert a[0] == Contingency((0, 1)) and a[-1] == Contingency((), (5, 6))


def test_enumerate_rejects_zero(sp):
    with pytest.raises(ValueError):
        list(enumerate_contingencies(sp, 0))
    assert instance_contingency_count(sp, 0) == 0


def test_immune_elements_reduce_counts(sp):
    d = instance_to_dict(sp)
    d["reliability"]["fail_immune"] = {"generators": [0], "lines": [2]}
    inst = instance_from_dict(d)
    conts = list(enumerate_contingencies(inst, 1))
    assert len(conts) == 11
    assert G1 not in conts and Contingency((), (2,)) not in conts
    with pytest.raises(ValueError):
        G1.check_against(inst)


def test_contingency_value_semantics():
    c = Contingency((3, 1, 1), (2,))
    assert c.failed_gens == (1, 3) and c.size == 3
    assert Contingency.from_dict(c.to_dict()) == c
    assert c.label() == "{G2,G4,L3}"


def test_dynamic_list_dedup():
    lst = DynamicContingencyList([G1, L1])
    assert not lst.append(Contingency((0,)))
    assert lst.append(Contingency((1,)))
    assert list(lst) == [G1, L1, Contingency((1,))] and len(lst) == 3


def test_k0_incumbent_loses_everything_on_g1(sp, sol_k0):
    chk = check_feasibility(sp, sol_k0.x[:, 0], sol_k0.dispatch[:, 0], G1, 0)
    assert not chk.feasible
    assert chk.violation == pytest.approx(196.4, rel=1e-9)
    assert chk.recourse.shed_total == pytest.approx(196.4, rel=1e-9)


def test_n1_incumbent_survives_g1_and_l1(sp, sol_k1):
    for c in (G1, L1):
        chk = check_feasibility(sp, sol_k1.x[:, 0], sol_k1.dispatch[:, 0], c, 0)
        assert chk.feasible and chk.violation <= violation_tolerance(sp, 0)


def test_no_failure_is_zero(sp, incumbents):
    for sol in incumbents.values():
        chk = check_feasibility(sp, sol.x[:, 0], sol.dispatch[:, 0], NO_FAILURE, 0)
        assert chk.violation == pytest.approx(0.0, abs=1e-7)


def test_bus5_double_line_outage(sp, sol_k1):
    pair = Contingency((), (3, 6))  # L4, L7: both lines at bus 5
    need = 42.8 / 196.4
    ok = sp.with_reliability(k=2, epsilon=[0.0, need + 1e-9])
    chk = check_feasibility(ok, sol_k1.x[:, 0], sol_k1.dispatch[:, 0], pair, 0)
    assert chk.feasible
    assert chk.recourse.q[4] == pytest.approx(42.8, abs=1e-6)
    tight = sp.with_reliability(k=2, epsilon=[0.0, 0.2])
    chk = check_feasibility(tight, sol_k1.x[:, 0], sol_k1.dispatch[:, 0], pair, 0)
    assert not chk.feasible
    assert chk.violation == pytest.approx(42.8 - 0.2 * 196.4, abs=1e-6)


def _random_cases(sp, incumbents, n, seed):
    rng = np.random.default_rng(seed)
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.2])
    pool = list(enumerate_contingencies(inst, 1)) + list(enumerate_contingencies(inst, 2))
    names = sorted(incumbents)
    for _ in range(n):
        sol = incumbents[names[rng.integers(len(names))]]
        yield inst, sol, pool[rng.integers(len(pool))]


def test_relaxed_value_matches_oracle(sp, incumbents):
    for inst, sol, c in _random_cases(sp, incumbents, 40, 11):
        chk = check_feasibility(inst, sol.x[:, 0], sol.dispatch[:, 0], c, 0)
        ref = relaxed_recourse_value(inst, 0, sol.x[:, 0], sol.dispatch[:, 0], c.failed_gens, c.failed_lines)
        assert chk.violation == pytest.approx(ref, rel=1e-7, abs=1e-7), c.label()


def test_relaxed_zero_iff_direct_feasible(sp, incumbents):
    for inst, sol, c in _random_cases(sp, incumbents, 60, 12):
        chk = check_feasibility(inst, sol.x[:, 0], sol.dispatch[:, 0], c, 0)
        assert chk.violation >= 0.0
        assert chk.feasible == direct_recourse_feasible(inst, sol.x[:, 0], sol.dispatch[:, 0], c, 0), c.label()


def test_relaxed_cf_always_feasible_both_backends(sp, sol_k0):
    prog, _ = build_relaxed_cf(sp, sol_k0.x[:, 0], sol_k0.dispatch[:, 0], G1, 0)
    a = solve_lp(prog, backend="reference")
    b = solve_lp(prog, backend="highs")
    assert a.objective == pytest.approx(b.objective, rel=1e-9)


def test_cut_value_at_incumbent_equals_violation(sp, incumbents):
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.2])
    for sol in incumbents.values():
        x, p = sol.x[:, 0], sol.dispatch[:, 0]
        for j in (1, 2):
            for c in enumerate_contingencies(inst, j):
                chk = check_feasibility(inst, x, p, c, 0)
                if chk.feasible:
                    continue
                cut = make_cut(chk, inst)
                assert cut.evaluate(x, p) == pytest.approx(chk.violation, rel=1e-6, abs=1e-6)
                d = cut.duals
                for arr in (d.delta_hat, d.delta_check, d.gamma, d.lambda_hat, d.lambda_check, d.zeta):
                    assert np.all(arr <= 0)
                assert d.pi <= 0


def test_g1_cut_excludes_k0_and_admits_n1(sp, sol_k0, sol_k1):
    cut = make_cut(check_feasibility(sp, sol_k0.x[:, 0], sol_k0.dispatch[:, 0], G1, 0), sp)
    assert cut.evaluate(sol_k0.x[:, 0], sol_k0.dispatch[:, 0]) == pytest.approx(196.4, rel=1e-6)
    assert cut.evaluate(sol_k1.x[:, 0], sol_k1.dispatch[:, 0]) <= 1e-6


def test_cut_from_feasible_check_rejected(sp, sol_k1):
    chk = check_feasibility(sp, sol_k1.x[:, 0], sol_k1.dispatch[:, 0], G1, 0)
    with pytest.raises(CutPreconditionError):
        make_cut(chk, sp)


def test_screen_list(sp, sol_k0, sol_k1):
    assert screen_list(sp, sol_k0, []) == []
    hits = screen_list(sp, sol_k0, [G1])
    assert len(hits) == 1 and hits[0].contingency == G1
    assert screen_list(sp, sol_k1, [G1, L1]) == []


def test_screen_list_workers_preserve_order(sp, sol_k0):
    conts = list(enumerate_contingencies(sp, 1))
    a = [c.contingency for c in screen_list(sp, sol_k0, conts)]
    b = [c.contingency for c in screen_list(sp, sol_k0, conts, workers=3)]
    assert a == b


def test_delta_factor_loosens_ramp(sp, sol_k1):
    # a ramp factor on every unit can only lower the relaxed value
    inst = sp.with_reliability(k=2, epsilon=[0.0, 0.0])
    boosted = inst.with_reliability(delta_gen={(g, 2): 2.0 for g in range(6)})
    for c in itertools.islice(enumerate_contingencies(inst, 2), 0, 78, 7):
        a = check_feasibility(inst, sol_k1.x[:, 0], sol_k1.dispatch[:, 0], c, 0).violation
        b = check_feasibility(boosted, sol_k1.x[:, 0], sol_k1.dispatch[:, 0], c, 0).violation
        assert b <= a + 1e-7
