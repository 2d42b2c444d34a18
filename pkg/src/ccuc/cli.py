"""``ccuc`` command line: solve, verify, enumerate, psip, fixtures.

Exit codes: 0 success / compliant, 1 violations found, 2 infeasible,
3 time limit without a compliant incumbent, 4 enumeration or build cap
exceeded, 64 bad usage, 65 bad instance or input data.

Standard output carries only deterministic content (no wall-clock timings
unless ``--timings`` is given), so reruns with the reference backend are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .buc import CommitmentSolution
from .contingency import count_contingencies, instance_contingency_count
from .engine import ALGORITHMS, BuildCapExceeded, EngineError, RunConfig, solve, verify_compliance
from .milp import SolverOptions, available_backends
from .model import FIXTURES, Instance, InstanceError, builtin_fixture, load_instance
from .psip import PsipError, PsipQuery, solve_psip

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INFEASIBLE = 2
EXIT_TIME_LIMIT = 3
EXIT_CAP = 4
EXIT_USAGE = 64
EXIT_DATA = 65


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _epsilon(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    return vals


def _positive(kind):
    def conv(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return conv


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text!r}")
    return v


def _instance_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixture", choices=FIXTURES, help="built-in instance")
    src.add_argument("--instance", type=Path, help="instance JSON file")
    p.add_argument("--k", type=_nonneg_int, help="override the contingency size limit")
    p.add_argument("--epsilon", type=_epsilon,
                   help="override shed fractions, comma list eps_1..eps_k")
    p.add_argument("--backend", help="LP/MILP backend (default: $CCUC_BACKEND or 'reference')")


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gap", type=_positive(float), default=1e-3, help="relative MILP gap (default 0.001)")
    p.add_argument("--time-limit", type=_positive(float), default=10_800.0,
                   help="wall-clock limit in seconds (default 10800)")
    p.add_argument("--workers", type=_positive(int), default=1, help="subproblem worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccuc", description="Contingency-constrained unit commitment (N-k-eps).")
    parser.add_argument("--verbose", "-v", action="store_true", help="iteration trace on stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve an instance")
    _instance_args(p)
    _solver_args(p)
    p.add_argument("--algorithm", choices=ALGORITHMS, default="csa2")
    p.add_argument("--output", type=Path, help="write the JSON report here and the table next to it (.txt)")
    p.add_argument("--timings", action="store_true", help="also print the timing table to stdout")

    p = sub.add_parser("verify", help="check a solution against every contingency")
    _instance_args(p)
    _solver_args(p)
    p.add_argument("--solution", type=Path, required=True, help="report or solution JSON")
    p.add_argument("--cap", type=_positive(int), default=10_000, help="enumeration cap")
    p.add_argument("--output", type=Path, help="write the compliance report as JSON")

    p = sub.add_parser("enumerate", help="count contingencies per size")
    _instance_args(p)

    p = sub.add_parser("psip", help="worst-case contingency for a solution")
    _instance_args(p)
    _solver_args(p)
    p.add_argument("--solution", type=Path, required=True, help="report or solution JSON")
    p.add_argument("--j", type=_positive(int), required=True, help="failure budget")
    p.add_argument("--period", type=_nonneg_int, help="single period (default: all)")
    p.add_argument("--output", type=Path, help="write the results as JSON")

    sub.add_parser("fixtures", help="list built-in instances")
    return parser


# -- helpers ---------------------------------------------------------------------


def _load(args) -> Instance:
    try:
        inst = builtin_fixture(args.fixture) if args.fixture else load_instance(args.instance)
    except FileNotFoundError as exc:
        raise DataError(f"instance file not found: {exc.filename}") from None
    if args.k is not None or args.epsilon is not None:
        k = args.k if args.k is not None else (len(args.epsilon) if args.epsilon is not None
                                               else inst.reliability.k)
        eps = args.epsilon
        if eps is None:
            eps = list(inst.reliability.epsilon[:k])
            if len(eps) < k:
                raise UsageError(f"--k {k} needs --epsilon with {k} values")
        if len(eps) != k:
            raise UsageError(f"--epsilon has {len(eps)} values but k is {k}")
        inst = inst.with_reliability(k=k, epsilon=eps)
    return inst


def _options(args) -> SolverOptions:
    return SolverOptions(rel_gap=args.gap, time_limit=args.time_limit)


def _backend(args):
    if args.backend and args.backend not in available_backends():
        raise UsageError(f"unknown backend {args.backend!r}; available: {', '.join(available_backends())}")
    return args.backend


def _load_solution(path: Path, instance: Instance) -> CommitmentSolution:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"solution file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: malformed JSON ({exc})") from None
    if isinstance(data, dict) and "solution" in data:
        data = data["solution"]
    if not isinstance(data, dict) or "commitment" not in data or "dispatch" not in data:
        raise DataError(f"{path}: no solution (expected 'commitment' and 'dispatch')")
    try:
        sol = CommitmentSolution.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad solution data ({exc})") from None
    shape = (instance.system.num_generators, instance.periods)
    if sol.x.shape != shape or sol.dispatch.shape != shape:
        raise DataError(f"{path}: solution shape {sol.x.shape} does not match instance {shape}")
    return sol


def _fmt(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def _gen_names(instance: Instance, idx) -> str:
    gens = instance.system.generators
    return ",".join(gens[g].name or f"G{g + 1}" for g in idx)


# -- verbs -------------------------------------------------------------------------


def cmd_solve(args) -> int:
    inst = _load(args)
    cfg = RunConfig(algorithm=args.algorithm, options=_options(args), time_limit=args.time_limit,
                    workers=args.workers, backend=_backend(args))
    rep = solve(inst, cfg)
    out = sys.stdout
    out.write(f"instance   {inst.name}\n")
    out.write(f"algorithm  {rep.algorithm}\n")
    out.write(f"k          {rep.k}\n")
    out.write(f"epsilon    {','.join(f'{e:g}' for e in rep.epsilon)}\n")
    out.write(f"status     {rep.status}\n")
    out.write(f"objective  {_fmt(rep.objective)}\n")
    if rep.solution is not None:
        out.write(f"energy     {_fmt(rep.solution.energy_cost)}\n")
        for t in range(inst.periods):
            out.write(f"committed[{t}] {{{_gen_names(inst, rep.committed(t))}}}\n")
    out.write(f"itr        {rep.iterations}\n")
    out.write(f"|L|        {rep.list_size}\n")
    out.write(f"cuts       {rep.cuts}\n")
    if rep.status not in ("optimal", "infeasible"):
        out.write(f"master_gap {_fmt(rep.master_gap)}\n")
        out.write(f"feas_gap   {_fmt(rep.feasibility_gap)}\n")
    if rep.message:
        out.write(f"message    {rep.message}\n")
    if args.timings:
        out.write(rep.table())
    if args.output:
        args.output.write_text(rep.to_json(inst) + "\n", encoding="utf-8")
        args.output.with_suffix(".txt").write_text(rep.table(), encoding="utf-8")
    if rep.status in ("optimal", "compliant_at_limit"):
        return EXIT_OK
    if rep.status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_TIME_LIMIT


def cmd_verify(args) -> int:
    inst = _load(args)
    sol = _load_solution(args.solution, inst)
    rep = verify_compliance(inst, sol, cap=args.cap, options=_options(args), backend=_backend(args),
                            workers=args.workers)
    sys.stdout.write(f"checked    {rep.checked}\n")
    sys.stdout.write(f"violations {len(rep.violations)}\n")
    for v in rep.violations:
        sys.stdout.write(f"  t={v.period} {v.contingency.label(inst)} shed={v.shed_mw:.6f} "
                         f"allowed={v.threshold_mw:.6f} excess={v.violation_mw:.6f}\n")
    sys.stdout.write("compliant\n" if rep.compliant else "NOT compliant\n")
    if args.output:
        args.output.write_text(json.dumps(rep.to_dict(inst), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if rep.compliant else EXIT_VIOLATIONS


def cmd_enumerate(args) -> int:
    inst = _load(args)
    sysm = inst.system
    G, E = len(sysm.failable_generators), len(sysm.failable_lines)
    sys.stdout.write(f"failable   {G} generators, {E} lines\n")
    sys.stdout.write(f"{'j':>3} {'size j':>12} {'cumulative':>12}\n")
    prev = 0
    for j in range(1, inst.reliability.k + 1):
        cum = count_contingencies(G, E, j)
        sys.stdout.write(f"{j:>3} {cum - prev:>12} {cum:>12}\n")
        prev = cum
    sys.stdout.write(f"total      {instance_contingency_count(inst)}\n")
    return EXIT_OK


def cmd_psip(args) -> int:
    inst = _load(args)
    sol = _load_solution(args.solution, inst)
    sysm = inst.system
    if args.j > len(sysm.failable_generators) + len(sysm.failable_lines):
        raise DataError(f"j={args.j} exceeds the number of failable elements "
                        f"({len(sysm.failable_generators) + len(sysm.failable_lines)})")
    if args.j > inst.reliability.k:
        raise DataError(f"j={args.j} exceeds k={inst.reliability.k}; pass --k/--epsilon to define eps_{args.j}")
    periods = range(inst.periods) if args.period is None else [args.period]
    if args.period is not None and args.period >= inst.periods:
        raise UsageError(f"--period {args.period} out of range (T={inst.periods})")
    results = []
    for t in periods:
        r = solve_psip(inst, PsipQuery.from_solution(sol, args.j, t), options=_options(args),
                       backend=_backend(args))
        results.append(r)
        label = "-" if r.contingency is None else r.contingency.label(inst)
        sys.stdout.write(f"t={t} j={args.j} worst={label} w*={r.objective:.6f}\n")
    if args.output:
        args.output.write_text(json.dumps([r.to_dict(inst) for r in results], indent=2) + "\n",
                               encoding="utf-8")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    for name in FIXTURES:
        inst = builtin_fixture(name)
        s = inst.system
        sys.stdout.write(f"{name:<24} buses={s.num_buses} gens={s.num_generators} lines={s.num_lines} "
                         f"T={inst.periods} k={inst.reliability.k}\n")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "enumerate": cmd_enumerate,
            "psip": cmd_psip, "fixtures": cmd_fixtures}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.verb](args)
    except UsageError as exc:
        sys.stderr.write(f"ccuc: error: {exc}\n")
        return EXIT_USAGE
    except (DataError, InstanceError, PsipError) as exc:
        sys.stderr.write(f"ccuc: {exc}\n")
        return EXIT_DATA
    except BuildCapExceeded as exc:
        sys.stderr.write(f"ccuc: {exc}\n")
        return EXIT_CAP
    except EngineError as exc:
        sys.stderr.write(f"ccuc: engine failure: {exc}\n")
        return 70


if __name__ == "__main__":
    sys.exit(main())
