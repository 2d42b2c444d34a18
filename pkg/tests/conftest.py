import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ccuc.buc import build_master, extract_solution, solve_buc  # noqa: E402
from ccuc.engine import RunConfig, solve  # noqa: E402
from ccuc.milp import SolverOptions  # noqa: E402
from ccuc.model import builtin_fixture  # noqa: E402

EXACT = SolverOptions(rel_gap=1e-9)


@pytest.fixture(scope="session")
def sp():
    return builtin_fixture("six_bus_single_period")


@pytest.fixture(scope="session")
def sol_k0(sp):
    return solve_buc(sp, EXACT)[1]


@pytest.fixture(scope="session")
def sol_k1(sp):
    return solve(sp, RunConfig(algorithm="bd", options=EXACT)).solution


@pytest.fixture(scope="session")
def sol_all_on(sp):
    master = build_master(sp)
    for g in range(sp.system.num_generators):
        master.program.add_constr(master.x[g][0] >= 1)
    return extract_solution(master.solve(EXACT), sp, master)


@pytest.fixture(scope="session")
def incumbents(sol_k0, sol_k1, sol_all_on):
    return {"k0": sol_k0, "k1": sol_k1, "all_on": sol_all_on}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
