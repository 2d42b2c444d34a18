"""Power system data model, reliability parameters and instance file I/O.

All power quantities are in MW on a common base; susceptances are per-unit.
Element ids are dense, zero-based indices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np


class InstanceError(ValueError):
    """Base class for instance problems; ``errors`` holds field-level messages."""

    def __init__(self, errors: Sequence[str] | str):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


class InstanceParseError(InstanceError):
    pass


class InstanceValidationError(InstanceError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    name: str = ""


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    startup_ramp: float
    shutdown_ramp: float
    min_up: int
    min_down: int
    init_up: int
    init_down: int
    cost_startup: float
    cost_shutdown: float
    cost_marginal: float
    fail_immune: bool = False
    name: str = ""
    initial_output: float | None = None

    def problems(self) -> list[str]:
        where = f"generators[{self.id}]"
        out = []
        if not 0 <= self.p_min <= self.p_max:
            out.append(f"{where}.p_min: need 0 <= p_min <= p_max (got {self.p_min}, {self.p_max})")
        for f in ("ramp_up", "ramp_down", "startup_ramp", "shutdown_ramp", "min_up", "min_down",
                  "init_up", "init_down", "cost_startup", "cost_shutdown", "cost_marginal"):
            v = getattr(self, f)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                out.append(f"{where}.{f}: must be a finite value >= 0 (got {v!r})")
        if self.init_up * self.init_down != 0:
            out.append(f"{where}.init_up/init_down: at most one may be positive")
        if self.initial_output is not None and not 0 <= self.initial_output <= self.p_max:
            out.append(f"{where}.initial_output: must lie in [0, p_max]")
        return out


@dataclass(frozen=True)
class TransmissionLine:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    flow_limit: float
    fail_immune: bool = False
    name: str = ""

    def problems(self) -> list[str]:
        where = f"lines[{self.id}]"
        out = []
        if self.from_bus == self.to_bus:
            out.append(f"{where}.to_bus: line endpoints must differ")
        if not self.susceptance > 0:
            out.append(f"{where}.susceptance: must be > 0")
        if not self.flow_limit > 0:
            out.append(f"{where}.flow_limit: must be > 0")
        return out


class DemandProfile:
    """Bus-by-period load matrix (MW)."""

    def __init__(self, loads: np.ndarray):
        arr = np.array(loads, dtype=float, ndmin=2)
        arr.setflags(write=False)
        self.loads = arr
        self.totals = arr.sum(axis=0)
        self.totals.setflags(write=False)

    @property
    def periods(self) -> int:
        return self.loads.shape[1]

    @property
    def num_buses(self) -> int:
        return self.loads.shape[0]

    def total(self, t: int) -> float:
        return float(self.totals[t])

    def __eq__(self, other):
        return isinstance(other, DemandProfile) and self.loads.shape == other.loads.shape \
            and bool(np.all(self.loads == other.loads))

    def __hash__(self):
        return hash(self.loads.tobytes())

    def __repr__(self):
        return f"DemandProfile(buses={self.num_buses}, periods={self.periods})"


@dataclass(frozen=True)
class ReliabilitySpec:
    """N-k-eps parameters. ``delta_*`` map ``(element, size)`` to a factor; missing means 1."""

    k: int = 0
    epsilon: tuple[float, ...] = ()
    delta_gen: Mapping[tuple[int, int], float] = field(default_factory=dict)
    delta_line: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def eps(self, j: int) -> float:
        return self.epsilon[j - 1]

    def gen_factor(self, g: int, j: int) -> float:
        return self.delta_gen.get((g, j), 1.0)

    def line_factor(self, e: int, j: int) -> float:
        return self.delta_line.get((e, j), 1.0)

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.k, int) or self.k < 0:
            out.append("reliability.k: must be an integer >= 0")
            return out
        if len(self.epsilon) != self.k:
            out.append(f"reliability.epsilon: need exactly k={self.k} values, got {len(self.epsilon)}")
        for j, e in enumerate(self.epsilon, 1):
            if not 0.0 <= e <= 1.0:
                out.append(f"reliability.epsilon[{j - 1}]: must lie in [0, 1]")
        for j in range(1, len(self.epsilon)):
            if self.epsilon[j - 1] > self.epsilon[j]:
                out.append(f"reliability.epsilon: must be non-decreasing "
                           f"(epsilon_{j}={self.epsilon[j - 1]} > epsilon_{j + 1}={self.epsilon[j]})")
        for label, table in (("delta_gen", self.delta_gen), ("delta_line", self.delta_line)):
            for (el, j), v in table.items():
                if not v >= 1.0:
                    out.append(f"reliability.{label}[{el}][{j - 1}]: factor must be >= 1")
        return out


@dataclass(frozen=True)
class PowerSystem:
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    lines: tuple[TransmissionLine, ...]
    reference_bus: int = 0

    @cached_property
    def gens_at(self) -> tuple[tuple[int, ...], ...]:
        """Generators located at each bus."""
        out: list[list[int]] = [[] for _ in self.buses]
        for g in self.generators:
            out[g.bus].append(g.id)
        return tuple(tuple(x) for x in out)

    @cached_property
    def lines_into(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.buses]
        for e in self.lines:
            out[e.to_bus].append(e.id)
        return tuple(tuple(x) for x in out)

    @cached_property
    def lines_out_of(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.buses]
        for e in self.lines:
            out[e.from_bus].append(e.id)
        return tuple(tuple(x) for x in out)

    @property
    def num_buses(self) -> int:
        return len(self.buses)

    @property
    def num_generators(self) -> int:
        return len(self.generators)

    @property
    def num_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def failable_generators(self) -> tuple[int, ...]:
        return tuple(g.id for g in self.generators if not g.fail_immune)

    @cached_property
    def failable_lines(self) -> tuple[int, ...]:
        return tuple(e.id for e in self.lines if not e.fail_immune)

    def problems(self) -> list[str]:
        out = []
        for kind, items in (("buses", self.buses), ("generators", self.generators), ("lines", self.lines)):
            ids = [x.id for x in items]
            if ids != list(range(len(ids))):
                out.append(f"{kind}: ids must be dense 0..{len(ids) - 1} in order")
        nb = len(self.buses)
        if not 0 <= self.reference_bus < nb:
            out.append(f"reference_bus: {self.reference_bus} is not a bus id")
        for g in self.generators:
            if not 0 <= g.bus < nb:
                out.append(f"generators[{g.id}].bus: unknown bus {g.bus}")
            out += g.problems()
        for e in self.lines:
            for f in ("from_bus", "to_bus"):
                if not 0 <= getattr(e, f) < nb:
                    out.append(f"lines[{e.id}].{f}: unknown bus {getattr(e, f)}")
            out += e.problems()
        return out


@dataclass(frozen=True)
class Instance:
    system: PowerSystem
    demand: DemandProfile
    reliability: ReliabilitySpec = ReliabilitySpec()
    name: str = ""

    @property
    def periods(self) -> int:
        return self.demand.periods

    def validate(self) -> "Instance":
        errs = self.system.problems() + self.reliability.problems()
        if self.demand.num_buses != self.system.num_buses:
            errs.append(f"demand: {self.demand.num_buses} bus rows for {self.system.num_buses} buses")
        if np.any(~np.isfinite(self.demand.loads)) or np.any(self.demand.loads < 0):
            errs.append("demand.loads: all loads must be finite and >= 0")
        if self.demand.periods < 1:
            errs.append("demand.periods: need at least one period")
        if not errs:
            for g in self.system.generators:
                if g.init_up > self.periods or g.init_down > self.periods:
                    errs.append(f"generators[{g.id}].init_up/init_down: initial obligation "
                                f"exceeds the {self.periods}-period horizon")
        if errs:
            raise InstanceValidationError(errs)
        return self

    def with_reliability(self, k: int | None = None, epsilon: Sequence[float] | None = None,
                         **kwargs) -> "Instance":
        """Copy with overridden reliability parameters (re-validated)."""
        rel = self.reliability
        if k is not None:
            rel = replace(rel, k=k)
        if epsilon is not None:
            rel = replace(rel, epsilon=tuple(float(e) for e in epsilon))
        if kwargs:
            rel = replace(rel, **kwargs)
        return replace(self, reliability=rel).validate()

    def with_demand(self, loads: np.ndarray) -> "Instance":
        return replace(self, demand=DemandProfile(loads)).validate()


# -- JSON ---------------------------------------------------------------------

_GEN_FIELDS = ("id", "bus", "p_min", "p_max", "ramp_up", "ramp_down", "startup_ramp",
               "shutdown_ramp", "min_up", "min_down", "init_up", "init_down",
               "cost_startup", "cost_shutdown", "cost_marginal")
_LINE_FIELDS = ("id", "from_bus", "to_bus", "susceptance", "flow_limit")
_INT_FIELDS = {"id", "bus", "min_up", "min_down", "init_up", "init_down", "from_bus", "to_bus"}


def _factor_table(raw, k: int, where: str, errs: list[str]) -> dict[tuple[int, int], float]:
    table: dict[tuple[int, int], float] = {}
    if raw is None:
        return table
    if not isinstance(raw, Mapping):
        errs.append(f"reliability.{where}: expected an object keyed by element id")
        return table
    for key, vals in raw.items():
        vals = [vals] * k if isinstance(vals, (int, float)) else list(vals)
        for j, v in enumerate(vals, 1):
            if float(v) != 1.0:
                table[(int(key), j)] = float(v)
    return table


def _element(cls, raw: Mapping, fields: Sequence[str], where: str, errs: list[str]):
    kwargs: dict[str, Any] = {}
    for f in fields:
        if f not in raw:
            errs.append(f"{where}.{f}: missing")
            continue
        v = raw[f]
        if f in _INT_FIELDS:
            if isinstance(v, bool) or not isinstance(v, int):
                errs.append(f"{where}.{f}: expected an integer")
                continue
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            errs.append(f"{where}.{f}: expected a number")
            continue
        kwargs[f] = v if f in _INT_FIELDS else float(v)
    if len(kwargs) != len(fields):
        return None
    kwargs["fail_immune"] = bool(raw.get("fail_immune", False))
    kwargs["name"] = str(raw.get("name", ""))
    if cls is Generator and raw.get("initial_output") is not None:
        kwargs["initial_output"] = float(raw["initial_output"])
    return cls(**kwargs)


def instance_from_dict(data: Mapping, name: str = "") -> Instance:
    """Build and validate an :class:`Instance` from its JSON document."""
    errs: list[str] = []
    if not isinstance(data, Mapping):
        raise InstanceParseError("top level: expected a JSON object")
    for key in ("buses", "generators", "lines", "demand", "reliability"):
        if key not in data:
            errs.append(f"{key}: missing")
    if errs:
        raise InstanceValidationError(errs)
    buses = tuple(Bus(int(b["id"]), str(b.get("name", ""))) for b in data["buses"])
    immune = data["reliability"].get("fail_immune", {}) or {}
    imm_g = set(immune.get("generators", []))
    imm_e = set(immune.get("lines", []))
    gens = []
    for i, raw in enumerate(data["generators"]):
        g = _element(Generator, raw, _GEN_FIELDS, f"generators[{i}]", errs)
        if g is not None:
            gens.append(replace(g, fail_immune=g.fail_immune or g.id in imm_g))
    lines = []
    for i, raw in enumerate(data["lines"]):
        e = _element(TransmissionLine, raw, _LINE_FIELDS, f"lines[{i}]", errs)
        if e is not None:
            lines.append(replace(e, fail_immune=e.fail_immune or e.id in imm_e))

    dem = data["demand"]
    periods = dem.get("periods")
    if not isinstance(periods, int) or periods < 1:
        errs.append("demand.periods: expected a positive integer")
        periods = 1
    loads = np.zeros((len(buses), periods))
    for key, vals in (dem.get("loads") or {}).items():
        try:
            i = int(key)
        except ValueError:
            errs.append(f"demand.loads[{key!r}]: key must be a bus id")
            continue
        if not 0 <= i < len(buses):
            errs.append(f"demand.loads[{key!r}]: unknown bus")
            continue
        vals = [vals] * periods if isinstance(vals, (int, float)) else list(vals)
        if len(vals) != periods:
            errs.append(f"demand.loads[{key!r}]: expected {periods} values, got {len(vals)}")
            continue
        loads[i] = vals

    rel = data["reliability"]
    k = rel.get("k", 0)
    if isinstance(k, bool) or not isinstance(k, int):
        errs.append("reliability.k: expected an integer")
        k = 0
    reliability = ReliabilitySpec(
        k=k,
        epsilon=tuple(float(e) for e in rel.get("epsilon", [])),
        delta_gen=_factor_table(rel.get("delta_gen"), k, "delta_gen", errs),
        delta_line=_factor_table(rel.get("delta_line"), k, "delta_line", errs),
    )
    if errs:
        raise InstanceValidationError(errs)
    system = PowerSystem(buses, tuple(gens), tuple(lines), int(data.get("reference_bus", 0)))
    return Instance(system, DemandProfile(loads), reliability,
                    name=str(data.get("name", name))).validate()


def instance_to_dict(inst: Instance) -> dict:
    sysm = inst.system
    gens = []
    for g in sysm.generators:
        d = {f: getattr(g, f) for f in _GEN_FIELDS}
        d["fail_immune"] = g.fail_immune
        if g.name:
            d["name"] = g.name
        if g.initial_output is not None:
            d["initial_output"] = g.initial_output
        gens.append(d)
    lines = []
    for e in sysm.lines:
        d = {f: getattr(e, f) for f in _LINE_FIELDS}
        d["fail_immune"] = e.fail_immune
        if e.name:
            d["name"] = e.name
        lines.append(d)
    rel = inst.reliability

    def factors(table, n):
        out = {}
        for el in range(n):
            vals = [table.get((el, j), 1.0) for j in range(1, rel.k + 1)]
            if any(v != 1.0 for v in vals):
                out[str(el)] = vals
        return out

    return {
        "name": inst.name,
        "buses": [{"id": b.id, "name": b.name} for b in sysm.buses],
        "generators": gens,
        "lines": lines,
        "reference_bus": sysm.reference_bus,
        "demand": {
            "periods": inst.periods,
            "loads": {str(i): inst.demand.loads[i].tolist() for i in range(sysm.num_buses)
                      if np.any(inst.demand.loads[i] != 0)},
        },
        "reliability": {
            "k": rel.k,
            "epsilon": list(rel.epsilon),
            "delta_gen": factors(rel.delta_gen, sysm.num_generators),
            "delta_line": factors(rel.delta_line, sysm.num_lines),
        },
    }


def load_instance(path: str | Path) -> Instance:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InstanceParseError(f"{path}: malformed JSON ({exc})") from exc
    return instance_from_dict(data, name=path.stem)


def write_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=2) + "\n", encoding="utf-8")


# -- fixtures -----------------------------------------------------------------

FIXTURES = ("six_bus_example", "six_bus_experiment", "six_bus_single_period", "synthetic_24bus")


def builtin_fixture(name: str) -> Instance:
    """Instances shipped with the package (see ``ccuc/fixtures/*.json``)."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    text = resources.files("ccuc.fixtures").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return instance_from_dict(json.loads(text), name=name)
