"""Concrete interpreter with single-bit-flip injection, exhaustive campaigns,
and the soundness check of a fault-index relation against their outcomes."""

from __future__ import annotations

import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .bitvalue import branch_taken, concrete_eval
from .coalesce import READ, CoalesceResult, FaultSite
from .ir import BecirError, Imm, Program

GOLDEN_CYCLE_CAP = 1_000_000
CYCLE_LIMIT_FACTOR = 10


class SimulationError(BecirError):
    pass


@dataclass(frozen=True)
class Event:
    cycle: int
    point: int
    opcode: str
    write: Optional[tuple] = None  # (reg, value)
    taken: Optional[bool] = None

    def to_json(self) -> dict:
        out = {"cycle": self.cycle, "point": self.point, "opcode": self.opcode}
        if self.write is not None:
            out["write"] = {"reg": f"r{self.write[0]}", "value": self.write[1]}
        if self.taken is not None:
            out["taken"] = self.taken
        return out


@dataclass(frozen=True)
class Trace:
    events: tuple
    status: str  # "returned", "cycle-limit" or "trap"
    value: Optional[int] = None
    golden: bool = False

    def __len__(self) -> int:
        return len(self.events)

    def same_run(self, other: "Trace") -> bool:
        return (self.events, self.status, self.value) == (other.events, other.status, other.value)

    def status_json(self) -> dict:
        out = {"status": self.status}
        if self.value is not None:
            out["value"] = self.value
        out["cycles"] = len(self.events)
        return out


@dataclass(frozen=True, order=True)
class FaultSpec:
    cycle: int
    reg: int
    bit: int

    def __str__(self) -> str:
        return f"{self.cycle}:r{self.reg}:{self.bit}"

    @classmethod
    def parse(cls, text: str) -> "FaultSpec":
        try:
            cyc, reg, bit = text.split(":")
            if not reg.startswith("r"):
                raise ValueError
            return cls(int(cyc), int(reg[1:]), int(bit))
        except ValueError:
            raise ValueError(f"bad fault spec {text!r}; expected CYCLE:rK:BIT") from None


@dataclass(frozen=True, order=True)
class DynamicFaultSite:
    """An inject-on-read experiment: flip ``reg``'s bit just before the read
    at ``cycle``; ``point`` is the static read point it instantiates."""

    cycle: int
    reg: int
    bit: int
    point: int

    @property
    def spec(self) -> FaultSpec:
        return FaultSpec(self.cycle, self.reg, self.bit)

    @property
    def anchor(self) -> FaultSite:
        return FaultSite(self.point, self.reg, self.bit, READ)

    def ident(self) -> str:
        return f"c{self.cycle}:r{self.reg}:{self.bit}"


# ---------------------------------------------------------------------------
# Interpreter

_BINARY = {"and", "or", "xor", "add", "sub", "shl", "shr", "slt"}


def _compile(prog: Program) -> list:
    """Flatten instructions into tuples the inner loop can unpack quickly."""
    code = []
    n = len(prog.instructions)
    for p, ins in enumerate(prog.instructions):
        srcs = tuple((True, s.value) if isinstance(s, Imm) else (False, s.index) for s in ins.srcs)
        target = prog.block_starts[ins.target] if ins.target is not None else None
        code.append((ins.opcode, ins.dst, srcs, target, p + 1 if p + 1 < n else None))
    return code


def initial_registers(prog: Program, inputs: Mapping[int, int]) -> list:
    regs = [0] * prog.regs
    for r, value in inputs.items():
        if not 0 <= r < prog.regs:
            raise SimulationError(f"input register r{r} out of range (regs {prog.regs})")
        if not 0 <= value <= prog.mask:
            raise SimulationError(f"input value {value} for r{r} does not fit in width {prog.width}")
        regs[r] = value
    missing = [a for a in prog.args if a not in inputs]
    if missing:
        raise SimulationError("missing inputs for " + ", ".join(f"r{a}" for a in missing))
    return regs


def _step(code, width, mask, pc, regs):
    """Execute one instruction in place; returns (event tuple, next pc, retval).

    next pc is None once the function returned.
    """
    op, dst, srcs, target, fall = code[pc]
    vals = [v if imm else regs[v] for imm, v in srcs]
    if op == "ret":
        return (pc, None, None, None), None, vals[0]
    if op == "jmp":
        return (pc, None, None, None), target, None
    if dst is None:
        taken = branch_taken(op, vals[0], vals[1])
        return (pc, None, None, taken), (target if taken else fall), None
    result = concrete_eval(op, vals, width)
    regs[dst] = result
    return (pc, dst, result, None), fall, None


def _run(code, width, mask, pc, regs, cycle, limit, faults):
    events = []
    value = None
    status = "cycle-limit"
    while cycle < limit:
        for f in faults.get(cycle, ()):
            regs[f.reg] ^= 1 << f.bit
        ev, pc, value = _step(code, width, mask, pc, regs)
        events.append(ev)
        cycle += 1
        if pc is None:
            status = "returned"
            break
    return events, status, value if status == "returned" else None


def _as_trace(raw_events, status, value, golden=False, op_names=None) -> Trace:
    events = tuple(Event(c, p, op_names[p], None if r is None else (r, v), t)
                   for c, (p, r, v, t) in enumerate(raw_events))
    return Trace(events, status, value, golden)


def execute(prog: Program, inputs: Mapping[int, int], fault: Optional[FaultSpec] = None,
            cycle_limit: Optional[int] = None, extra_faults: Sequence[FaultSpec] = ()) -> Trace:
    """Run the program, optionally flipping one bit before a given cycle.

    Without an explicit limit a faulty run gets ten times the golden length.
    ``extra_faults`` lets tests inject more than one flip in a run.
    """
    faults = [f for f in ([fault] if fault else []) + list(extra_faults)]
    for f in faults:
        if not (0 <= f.reg < prog.regs and 0 <= f.bit < prog.width and f.cycle >= 0):
            raise SimulationError(f"fault {f} outside the register file")
    if cycle_limit is None:
        if faults:
            cycle_limit = CYCLE_LIMIT_FACTOR * len(execute(prog, inputs))
        else:
            cycle_limit = GOLDEN_CYCLE_CAP
    if cycle_limit <= 0:
        raise SimulationError("cycle limit must be positive")
    by_cycle = {}
    for f in faults:
        by_cycle.setdefault(f.cycle, []).append(f)
    code = _compile(prog)
    regs = initial_registers(prog, inputs)
    events, status, value = _run(code, prog.width, prog.mask, 0, regs, 0, cycle_limit, by_cycle)
    names = [ins.opcode for ins in prog.instructions]
    return _as_trace(events, status, value, golden=not faults, op_names=names)


# ---------------------------------------------------------------------------
# Fast faulty re-execution against a golden run

class Simulator:
    """Replays faults from the golden state at the injection cycle and stops
    early once the faulty state re-converges with the golden one."""

    def __init__(self, prog: Program, inputs: Mapping[int, int], cycle_limit: Optional[int] = None):
        self.prog = prog
        self.inputs = dict(inputs)
        self.code = _compile(prog)
        regs = initial_registers(prog, inputs)
        self.states = []
        events = []
        pc, value, cycle = 0, None, 0
        while pc is not None:
            if cycle >= GOLDEN_CYCLE_CAP:
                raise SimulationError("golden run exceeded the cycle cap")
            self.states.append((pc, tuple(regs)))
            ev, pc, value = _step(self.code, prog.width, prog.mask, pc, regs)
            events.append(ev)
            cycle += 1
        self.events = events
        self.value = value
        self.length = len(events)
        self.limit = cycle_limit or CYCLE_LIMIT_FACTOR * self.length
        names = [ins.opcode for ins in prog.instructions]
        self.golden = _as_trace(events, "returned", value, golden=True, op_names=names)

    def run_key(self, spec: FaultSpec):
        """Canonical description of the faulty trace; None means golden.

        The key is (first differing cycle, differing events, tail) where tail
        is "G" when the remaining events and final status are the golden
        ones, otherwise (status, value).
        """
        c = spec.cycle
        if c >= self.length:
            return None
        prog = self.prog
        width, mask, code = prog.width, prog.mask, self.code
        pc, gregs = self.states[c]
        regs = list(gregs)
        regs[spec.reg] ^= 1 << spec.bit
        events = []
        cycle = c
        status, value = "cycle-limit", None
        converged = False
        states = self.states
        while cycle < self.limit:
            if cycle > c and cycle < self.length:
                gpc, gr = states[cycle]
                if pc == gpc and tuple(regs) == gr:
                    converged = True
                    break
            ev, pc, value = _step(code, width, mask, pc, regs)
            events.append(ev)
            cycle += 1
            if pc is None:
                status = "returned"
                break
        golden = self.events
        d = 0
        while d < len(events) and c + d < self.length and events[d] == golden[c + d]:
            d += 1
        end = c + len(events)
        rejoins = converged or (end == self.length and status == "returned" and value == self.value)
        if rejoins:
            e = len(events)
            while e > d and events[e - 1] == golden[c + e - 1]:
                e -= 1
            if e == d:
                return None
            return (c + d, tuple(events[d:e]), "G")
        return (c + d, tuple(events[d:]), (status, value if status == "returned" else None))

    def trace(self, spec: FaultSpec) -> Trace:
        return execute(self.prog, self.inputs, spec, self.limit)


def enumerate_dynamic_fault_space(golden: Trace, prog: Program) -> tuple:
    """One site per (dynamic read event, bit), in (cycle, reg, bit) order."""
    sites = []
    for ev in golden.events:
        for v in sorted(prog.instructions[ev.point].reads):
            for i in range(prog.width):
                sites.append(DynamicFaultSite(ev.cycle, v, i, ev.point))
    return tuple(sites)


# ---------------------------------------------------------------------------
# Campaigns

@dataclass
class CampaignResult:
    """Trace class id per dynamic site.  Class 0 is the golden trace, the
    others are numbered by first occurrence in site order."""

    sites: tuple
    classes: tuple
    runs: int = 0
    wall_time: float = 0.0
    keys: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def distinct_traces(self) -> int:
        return len(set(self.classes))

    def as_map(self) -> dict:
        return dict(zip(self.sites, self.classes))

    def canonical(self) -> "CampaignResult":
        relabel = {0: 0}
        out = []
        for c in self.classes:
            if c not in relabel:
                relabel[c] = len(relabel)
            out.append(relabel[c])
        return CampaignResult(self.sites, tuple(out), self.runs, self.wall_time)

    def same_classes(self, other: "CampaignResult") -> bool:
        a, b = self.canonical(), other.canonical()
        return a.sites == b.sites and a.classes == b.classes

    def to_json(self) -> dict:
        return {
            "sites": [s.ident() for s in self.sites],
            "points": [s.point for s in self.sites],
            "classes": list(self.classes),
            "summary": {
                "runs": self.runs,
                "distinct_traces": self.distinct_traces,
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "CampaignResult":
        sites = []
        for ident, point in zip(data["sites"], data["points"]):
            cyc, reg, bit = ident.split(":")
            sites.append(DynamicFaultSite(int(cyc[1:]), int(reg[1:]), int(bit), point))
        summary = data.get("summary", {})
        return cls(tuple(sites), tuple(data["classes"]), summary.get("runs", 0))


_WORKER = {}


def _worker_init(prog, inputs, limit):
    _WORKER["sim"] = Simulator(prog, inputs, limit)


def _worker_chunk(specs):
    sim = _WORKER["sim"]
    return [sim.run_key(s) for s in specs]


def _classify(sites, keys) -> tuple:
    ids = {None: 0}
    out = []
    for k in keys:
        if k not in ids:
            ids[k] = len(ids)
        out.append(ids[k])
    return tuple(out), ids


def exhaustive_campaign(prog: Program, inputs: Mapping[int, int], plan=None, jobs: int = 1,
                        cycle_limit: Optional[int] = None,
                        simulator: Optional[Simulator] = None) -> CampaignResult:
    """Run one faulty execution per planned site and class the traces.

    ``plan`` is a sequence of DynamicFaultSite (or a CampaignPlan, whose
    injections are used); it defaults to the full inject-on-read space.
    Results do not depend on ``jobs``.
    """
    start = time.perf_counter()
    sim = simulator or Simulator(prog, inputs, cycle_limit)
    if plan is None:
        sites = enumerate_dynamic_fault_space(sim.golden, prog)
    else:
        sites = tuple(getattr(plan, "injections", plan))
    specs = [s.spec for s in sites]
    if jobs > 1 and len(specs) > 1:
        size = max(1, -(-len(specs) // (jobs * 4)))
        chunks = [specs[k:k + size] for k in range(0, len(specs), size)]
        with ProcessPoolExecutor(jobs, initializer=_worker_init,
                                 initargs=(prog, dict(inputs), sim.limit)) as pool:
            keys = [k for part in pool.map(_worker_chunk, chunks) for k in part]
    else:
        keys = [sim.run_key(s) for s in specs]
    classes, ids = _classify(sites, keys)
    return CampaignResult(sites, classes, len(specs), time.perf_counter() - start, ids)


# ---------------------------------------------------------------------------
# Validation of a relation against campaign outcomes

@dataclass(frozen=True)
class ValidationReport:
    sites: int
    sound_precise: int
    sound_imprecise: int
    unsound: int
    masked_sites: int
    masked_mismatches: int

    @property
    def ok(self) -> bool:
        return self.unsound == 0 and self.masked_mismatches == 0

    def to_json(self) -> dict:
        return {
            "sites": self.sites,
            "sound_precise": self.sound_precise,
            "sound_imprecise": self.sound_imprecise,
            "unsound": self.unsound,
            "masked_sites": self.masked_sites,
            "masked_mismatches": self.masked_mismatches,
            "ok": self.ok,
        }


def dynamic_class_keys(result: CoalesceResult, sites: Sequence[DynamicFaultSite]) -> list:
    """Dynamic instance of the static relation: masked sites share the key
    "masked"; other sites are keyed by (cycle, static class root), so only
    flips of the same execution of a point are ever grouped together."""
    keys = []
    for s in sites:
        root = result.read_root(s.point, s.reg, s.bit)
        keys.append("masked" if root == 0 else (s.cycle, root))
    return keys


def _pairs(n: int) -> int:
    return n * (n - 1) // 2


def validate_equivalence(result: CoalesceResult, campaign: CampaignResult,
                         keys: Optional[Sequence] = None) -> ValidationReport:
    """Count site pairs per relation/trace agreement.

    Same relation class and same trace is sound-precise, different class
    and same trace is sound-imprecise, same class and different trace is
    unsound.  ``keys`` overrides the dynamic classes (used to check that a
    deliberately wrong relation is caught).
    """
    keys = list(keys) if keys is not None else dynamic_class_keys(result, campaign.sites)
    by_key = Counter(keys)
    by_trace = Counter(campaign.classes)
    by_both = Counter(zip(keys, campaign.classes))
    precise = sum(_pairs(n) for n in by_both.values())
    unsound = sum(_pairs(n) for n in by_key.values()) - precise
    imprecise = sum(_pairs(n) for n in by_trace.values()) - precise
    masked = [c for k, c in zip(keys, campaign.classes) if k == "masked"]
    mismatches = sum(1 for c in masked if c != 0)
    return ValidationReport(len(keys), precise, imprecise, unsound, len(masked), mismatches)
