"""Vulnerability metric and reliability-driven list scheduling per block."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .coalesce import CoalesceResult, run_coalescing
from .faultsim import Trace
from .ir import Block, Program

POLICIES = ("best", "worst", "original")


@dataclass(frozen=True)
class DependencyDAG:
    instructions: tuple
    preds: tuple  # preds[k]: indices that must be scheduled before k
    pinned_last: Optional[int]

    @property
    def edges(self) -> set:
        return {(a, b) for b, ps in enumerate(self.preds) for a in ps}

    def is_topological(self, order) -> bool:
        pos = {k: n for n, k in enumerate(order)}
        if sorted(order) != list(range(len(self.instructions))):
            return False
        if self.pinned_last is not None and order[-1] != self.pinned_last:
            return False
        return all(pos[a] < pos[b] for a, b in self.edges)


def build_block_dag(block: Block) -> DependencyDAG:
    """RAW, WAR and WAW register edges; a terminator depends on everything."""
    ins = block.instructions
    preds = []
    for b, later in enumerate(ins):
        deps = set()
        for a in range(b):
            earlier = ins[a]
            raw = set(earlier.writes) & set(later.reads)
            war = set(earlier.reads) & set(later.writes)
            waw = set(earlier.writes) & set(later.writes)
            if raw or war or waw or later.is_terminator:
                deps.add(a)
        preds.append(frozenset(deps))
    pinned = len(ins) - 1 if ins and ins[-1].is_terminator else None
    return DependencyDAG(ins, tuple(preds), pinned)


# ---------------------------------------------------------------------------
# Vulnerability

@dataclass(frozen=True)
class VulnerabilityReport:
    cycles: int
    total_fault_space: int
    live_fault_sites: int

    def to_json(self) -> dict:
        return {
            "cycles": self.cycles,
            "total_fault_space": self.total_fault_space,
            "live_fault_sites": self.live_fault_sites,
        }


def vulnerability(prog: Program, golden: Trace, result: Optional[CoalesceResult] = None) -> VulnerabilityReport:
    """Sum over executed cycles of register bits that are live after the
    instruction and whose latest access does not make a flip harmless.

    The register returned by ``ret`` counts as live at the return.
    """
    result = result or run_coalescing(prog)
    access = result.analysis.access
    w = prog.width
    last_access = [None] * prog.regs
    masked_cache = {}

    def masked_bits(p, v):
        key = (p, v)
        if key not in masked_cache:
            masked_cache[key] = sum(1 for i in range(w) if result.masked_after(p, v, i))
        return masked_cache[key]

    total = 0
    for ev in golden.events:
        p = ev.point
        ins = prog.instructions[p]
        previous = list(last_access)
        for v in ins.reads + ins.writes:
            last_access[v] = p
        live = set(access.live_out[p])
        if ins.opcode == "ret":
            live |= set(ins.reads)
        for v in live:
            anchor = previous[v] if ins.opcode == "ret" and v in ins.reads else last_access[v]
            total += w if anchor is None else w - masked_bits(anchor, v)
    cycles = len(golden.events)
    return VulnerabilityReport(cycles, cycles * prog.regs * w, total)


# ---------------------------------------------------------------------------
# Scheduling

def _score(k, dag, remaining, block_live_out, masked, width) -> int:
    """Bits retired by scheduling instruction k now: every bit of each
    register it kills, minus the unmasked bits of a live register it defines.

    ``masked[(k, v)]`` counts bits of the value k writes to v whose flip is
    harmless."""
    ins = dag.instructions[k]
    later_reads = set()
    later_writes = set()
    for j in remaining:
        if j != k:
            later_reads.update(dag.instructions[j].reads)
            later_writes.update(dag.instructions[j].writes)
    killed = 0
    for v in ins.reads:
        if v in ins.writes or (v not in later_reads and (v not in block_live_out or v in later_writes)):
            killed += width
    defined = 0
    for v in ins.writes:
        live = v in later_reads or (v in block_live_out and v not in later_writes)
        if live:
            defined += width - masked[(k, v)]
    return killed - defined


def schedule_block(prog: Program, block_index: int, result: CoalesceResult, policy: str = "best") -> tuple:
    """Greedy list schedule of one block; returns indices into the block.

    ``best`` picks the ready instruction with the highest score, ``worst``
    the lowest; ties go to the earlier instruction.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    block = prog.blocks[block_index]
    n = len(block.instructions)
    if policy == "original" or n < 2:
        return tuple(range(n))
    dag = build_block_dag(block)
    points = prog.block_points(block_index)
    access = result.analysis.access
    block_live_out = access.live_out[points[-1]]
    masked = {}
    for k, p in enumerate(points):
        for v in block.instructions[k].writes:
            masked[(k, v)] = sum(1 for i in range(prog.width) if result.masked_after(p, v, i))
    remaining = set(range(n))
    done = set()
    order = []
    sign = 1 if policy == "best" else -1
    while remaining:
        ready = [k for k in sorted(remaining)
                 if dag.preds[k] <= done and (k != dag.pinned_last or len(remaining) == 1)]
        choice = max(ready, key=lambda k: (sign * _score(k, dag, remaining, block_live_out, masked, prog.width), -k))
        order.append(choice)
        remaining.discard(choice)
        done.add(choice)
    return tuple(order)


def reschedule_program(prog: Program, result: Optional[CoalesceResult] = None, policy: str = "best") -> Program:
    result = result or run_coalescing(prog)
    blocks = []
    for bi, blk in enumerate(prog.blocks):
        order = schedule_block(prog, bi, result, policy)
        blocks.append(Block(blk.label, tuple(blk.instructions[k] for k in order)))
    return Program(prog.name, prog.args, prog.width, prog.regs, tuple(blocks))
