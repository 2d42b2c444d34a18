"""Six-bus case: what N-1 security costs compared with a plain unit commitment.

    python walkthroughs/n1_price_of_security.py
"""

from ccuc.engine import RunConfig, solve, verify_compliance
from ccuc.model import builtin_fixture

inst = builtin_fixture("six_bus_single_period")
names = [g.name for g in inst.system.generators]

plain = solve(inst.with_reliability(k=0, epsilon=[]), RunConfig(algorithm="csa2"))
secure = solve(inst.with_reliability(k=1, epsilon=[0.0]), RunConfig(algorithm="csa2"))

for label, rep in (("no contingencies", plain), ("N-1, no shedding", secure)):
    sol = rep.solution
    on = ", ".join(f"{names[g]}={sol.dispatch[g, 0]:.1f}" for g in sol.committed())
    print(f"{label:18s} cost {sol.objective:9.3f}  energy {sol.energy_cost:9.3f}  [{on}]")

up = secure.solution.energy_cost / plain.solution.energy_cost - 1
print(f"energy cost increase: {100 * up:.2f}%")

# the cheap plan leans on G1 alone; losing it leaves the whole load unserved
report = verify_compliance(inst.with_reliability(k=1, epsilon=[0.0]), plain.solution)
worst = max(report.violations, key=lambda v: v.violation_mw)
print(f"plain plan under N-1: {len(report.violations)} of {report.checked} failures violate, "
      f"worst {worst.contingency.label(inst)} sheds {worst.shed_mw:.1f} MW")
