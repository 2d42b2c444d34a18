"""Follow the dynamic contingency list through a CSA2 run at N-2.

    python walkthroughs/csa2_trace.py [eps2]
"""

import sys

from ccuc.contingency import instance_contingency_count
from ccuc.engine import RunConfig, solve
from ccuc.model import builtin_fixture

eps2 = float(sys.argv[1]) if len(sys.argv) > 1 else 0.27
inst = builtin_fixture("six_bus_single_period").with_reliability(k=2, epsilon=[0.0, eps2])
rep = solve(inst, RunConfig(algorithm="csa2"))

print(f"{'itr':>4} {'objective':>11} {'screen':>7} {'psip':>5} {'cuts':>5} {'|L|':>4}  new")
for r in rep.trace:
    new = " ".join(r.new_contingencies)
    print(f"{r.iteration:>4} {r.objective:>11.3f} {r.screen_violations:>7} {r.psip_solves:>5} "
          f"{r.cuts_added:>5} {r.list_size:>4}  {new}")

C = instance_contingency_count(inst)
print(f"\n{rep.status}: cost {rep.objective:.3f}, units {[inst.system.generators[g].name for g in rep.committed()]}")
print(f"|L| = {rep.list_size} of {C} candidate failures")
print(rep.table(), end="")
