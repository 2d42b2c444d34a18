"""Worst-case failure search on a fixed operating point, checked against enumeration.

    python walkthroughs/worst_case_search.py
"""

from ccuc.engine import RunConfig, solve
from ccuc.model import builtin_fixture
from ccuc.psip import PsipQuery, verify_psip_against_enumeration

inst = builtin_fixture("six_bus_single_period").with_reliability(k=2, epsilon=[0.0, 0.3])
plan = solve(inst.with_reliability(k=1, epsilon=[0.0]), RunConfig(algorithm="csa2")).solution

for j in (1, 2):
    check = verify_psip_against_enumeration(inst, PsipQuery.from_solution(plan, j, 0))
    ranked = sorted(check.values.items(), key=lambda kv: -kv[1])[:3]
    print(f"j={j}: search w*={check.psip_objective:.4f} at {check.psip_contingency.label(inst)}; "
          f"enumeration of {len(check.values)} failures gives {check.enumerated_max:.4f}")
    for c, v in ranked:
        print(f"    {c.label(inst):10s} {v:9.4f}")
