import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccuc.model import (
    FIXTURES,
    InstanceParseError,
    InstanceValidationError,
    builtin_fixture,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    write_instance,
)

# unit, bus (1-based), marginal, startup, p_max, p_min, ramp
GEN_TABLE = [
    ("G1", 1, 13.51, 125, 220, 100, 55),
    ("G2", 2, 32.63, 249, 100, 10, 50),
    ("G3", 6, 17.69, 0, 100, 10, 20),
    ("G4", 1, 42, 50, 100, 0, 50),
    ("G5", 2, 42, 50, 100, 0, 50),
    ("G6", 6, 42, 50, 100, 0, 50),
]
# line, from, to, susceptance, limit
LINE_TABLE = [
    ("L1", 1, 2, 5.88, 200),
    ("L2", 1, 4, 3.88, 100),
    ("L3", 2, 4, 5.08, 100),
    ("L4", 5, 6, 7.14, 100),
    ("L5", 3, 6, 55.56, 100),
    ("L6", 2, 3, 27.03, 100),
    ("L7", 4, 5, 27.03, 100),
]


@pytest.mark.parametrize("name", ["six_bus_example", "six_bus_single_period", "six_bus_experiment"])
def test_fixture_tables_literal(name):
    inst = builtin_fixture(name)
    gens = inst.system.generators
    for row, g in zip(GEN_TABLE, gens):
        nm, bus, marg, start, pmax, pmin, ramp = row
        assert (g.name, g.bus + 1, g.cost_marginal, g.cost_startup, g.p_max, g.p_min, g.ramp_up) == \
            (nm, bus, marg, start, pmax, pmin, ramp)
        assert g.cost_shutdown == 0.0
    for e, row in zip(inst.system.lines, LINE_TABLE):
        assert (e.name, e.from_bus + 1, e.to_bus + 1, e.susceptance, e.flow_limit) == row


def test_experiment_extra_units_copy_fast_units():
    inst = builtin_fixture("six_bus_experiment")
    gens = inst.system.generators
    assert inst.system.num_generators == 9 and inst.system.num_lines == 7
    for a, b in zip(gens[3:6], gens[6:9]):
        assert (a.bus, a.p_min, a.p_max, a.ramp_up, a.cost_startup, a.cost_marginal) == \
            (b.bus, b.p_min, b.p_max, b.ramp_up, b.cost_startup, b.cost_marginal)


def test_example_dimensions():
    inst = builtin_fixture("six_bus_example")
    s = inst.system
    assert (s.num_buses, s.num_generators, s.num_lines) == (6, 6, 7)


def test_single_period_demand():
    inst = builtin_fixture("six_bus_single_period")
    assert inst.periods == 1
    assert inst.demand.total(0) == pytest.approx(196.4, abs=1e-9)
    assert list(inst.demand.loads[:, 0]) == [0, 0, 51.2, 102.4, 42.8, 0]


def test_g3_startup_and_l1_limit():
    inst = builtin_fixture("six_bus_example")
    assert inst.system.generators[2].cost_startup == 0
    assert inst.system.lines[0].flow_limit == 200


def test_unknown_fixture():
    with pytest.raises(KeyError):
        builtin_fixture("ieee118")


@pytest.mark.parametrize("name", FIXTURES)
def test_round_trip(name, tmp_path):
    inst = builtin_fixture(name)
    path = tmp_path / f"{name}.json"
    write_instance(inst, path)
    again = load_instance(path)
    assert again.system == inst.system
    assert again.demand == inst.demand
    assert again.reliability == inst.reliability


@pytest.mark.parametrize("name", FIXTURES)
def test_totals_are_bus_sums(name):
    inst = builtin_fixture(name)
    assert np.allclose(inst.demand.totals, inst.demand.loads.sum(axis=0))


def _doc():
    return instance_to_dict(builtin_fixture("six_bus_single_period"))


def test_eps_monotonic():
    d = _doc()
    d["reliability"] = {"k": 2, "epsilon": [0.2, 0.1]}
    with pytest.raises(InstanceValidationError, match="non-decreasing"):
        instance_from_dict(d)


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["generators"][0].update(p_min=300.0), "p_min"),
    (lambda d: d["generators"][0].update(init_up=2, init_down=1), "init_up"),
    (lambda d: d["generators"][1].update(ramp_up=-1.0), "ramp_up"),
    (lambda d: d["generators"][1].update(bus=17), "unknown bus"),
    (lambda d: d["lines"][0].update(to_bus=0), "endpoints"),
    (lambda d: d["lines"][0].update(susceptance=0.0), "susceptance"),
    (lambda d: d["lines"][0].update(flow_limit=-5.0), "flow_limit"),
    (lambda d: d["demand"]["loads"].update({"2": [-1.0]}), "loads"),
    (lambda d: d.update(reference_bus=9), "reference_bus"),
    (lambda d: d["reliability"].update(epsilon=[1.5]), "epsilon"),
    (lambda d: d["reliability"].update(delta_gen={"0": [0.5]}), "factor"),
    (lambda d: d["generators"][0].pop("p_max"), "p_max: missing"),
    (lambda d: d["generators"][0].update(min_up=1.5), "integer"),
    (lambda d: d["generators"][0].update(id=3), "dense"),
    (lambda d: d.pop("lines"), "lines: missing"),
])
def test_validation_errors_are_named(mutate, needle):
    d = _doc()
    mutate(d)
    with pytest.raises(InstanceValidationError) as info:
        instance_from_dict(d)
    assert any(needle in e for e in info.value.errors), info.value.errors


def test_all_errors_reported_together():
    d = _doc()
    d["generators"][0]["p_min"] = 300.0
    d["lines"][1]["susceptance"] = -1.0
    with pytest.raises(InstanceValidationError) as info:
        instance_from_dict(d)
    assert len(info.value.errors) >= 2


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InstanceParseError):
        load_instance(p)


def test_immune_merge_and_counts():
    d = _doc()
    d["reliability"]["fail_immune"] = {"generators": [0], "lines": [4, 5]}
    inst = instance_from_dict(d)
    assert inst.system.failable_generators == (1, 2, 3, 4, 5)
    assert inst.system.failable_lines == (0, 1, 2, 3, 6)


def test_scalar_load_broadcasts():
    d = instance_to_dict(builtin_fixture("six_bus_example"))
    d["demand"]["loads"] = {"3": 10.0}
    inst = instance_from_dict(d)
    assert np.all(inst.demand.loads[3] == 10.0) and inst.demand.total(5) == 10.0


def test_adjacency_consistent():
    s = builtin_fixture("six_bus_experiment").system
    for i, gs in enumerate(s.gens_at):
        assert all(s.generators[g].bus == i for g in gs)
    for i in range(s.num_buses):
        assert all(s.lines[e].to_bus == i for e in s.lines_into[i])
        assert all(s.lines[e].from_bus == i for e in s.lines_out_of[i])


def test_with_reliability_revalidates():
    inst = builtin_fixture("six_bus_single_period")
    assert inst.with_reliability(k=2, epsilon=[0, 0.3]).reliability.eps(2) == 0.3
    with pytest.raises(InstanceValidationError):
        inst.with_reliability(k=2, epsilon=[0.0])


def test_instance_schema_accepts_fixtures():
    jsonschema = pytest.importorskip("jsonschema")
    from pathlib import Path
    schema = json.loads((Path(__file__).parents[1] / "docs" / "instance_schema.json").read_text())
    for name in FIXTURES:
        jsonschema.validate(instance_to_dict(builtin_fixture(name)), schema)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(0, 500, allow_nan=False), min_size=3, max_size=3), min_size=6, max_size=6))
def test_total_is_sum_property(rows):
    base = builtin_fixture("six_bus_single_period")
    loads = np.array(rows)
    inst = base.with_demand(loads)
    for t in range(3):
        assert inst.demand.total(t) == pytest.approx(loads[:, t].sum())
