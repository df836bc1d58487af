"""Fault-index coalescing: which single-bit flips are masked, and which
flips provably lead to the same execution.

Two kinds of static sites live in the relation:

* read sites ``(p, v, i)``: bit i of v flipped just before p reads it.
  These are exactly the anchors of inject-on-read experiments.
* write sites ``(p, v, i)``: bit i of v flipped right after p wrote it.

A flip before a read both feeds the instruction and stays in the register
afterwards, so a read site can only be declared masked, or grouped with a
sibling, once that lingering copy is known to be harmless.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .bitvalue import (
    ONE, ZERO, BitValueMap, abstract_equal, abstract_is_zero,
    abstract_less_than, analyze_bit_values, operand_word,
)
from .ir import Analysis, BecirError, Instruction, Program, Reg, analyze_structure


class CoalesceError(BecirError):
    pass


READ, WRITE = 0, 1


@dataclass(frozen=True, order=True)
class FaultSite:
    point: int
    reg: int
    bit: int
    kind: int = READ

    def ident(self, both: bool = False) -> str:
        base = f"p{self.point}:r{self.reg}:{self.bit}"
        return base + ":w" if (self.kind == WRITE and both) else base


class EquivRelation:
    """Union-find over fault indices.  Index 0 is the masked index s0; the
    remaining indices are sites sorted by (point, reg, bit, kind), and the
    root of every class is its smallest index."""

    def __init__(self, sites):
        self.sites = tuple(sites)
        self.index = {s: k + 1 for k, s in enumerate(self.sites)}
        self.parent = list(range(len(self.sites) + 1))
        self.n_classes = len(self.parent)

    def copy(self) -> "EquivRelation":
        other = EquivRelation.__new__(EquivRelation)
        other.sites = self.sites
        other.index = self.index
        other.parent = list(self.parent)
        other.n_classes = self.n_classes
        return other

    def find(self, k: int) -> int:
        root = k
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[k] != root:
            self.parent[k], k = root, self.parent[k]
        return root

    def merge(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.n_classes -= 1
        return True

    def same(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)

    def classes(self) -> list:
        groups = {}
        for k in range(len(self.parent)):
            groups.setdefault(self.find(k), []).append(k)
        return [groups[r] for r in sorted(groups)]

    def partition(self) -> frozenset:
        return frozenset(frozenset(c) for c in self.classes())


# ---------------------------------------------------------------------------
# Outcomes of a flipped evaluation

@dataclass(frozen=True)
class Outcome:
    kind: str  # "taken", "not-taken", "value", "unknown"
    value: Optional[int] = None

    @property
    def determinate(self) -> bool:
        return self.kind != "unknown"


UNKNOWN = Outcome("unknown")
COMPARATORS = ("slt", "seqz", "beq", "bne", "blt", "bge")


def _decide(opcode: str, words) -> Optional[object]:
    if opcode == "seqz":
        return abstract_is_zero(words[0])
    a, b = words
    if opcode == "slt" or opcode == "blt":
        return abstract_less_than(a, b)
    if opcode == "bge":
        lt = abstract_less_than(a, b)
        return None if lt is None else not lt
    eq = abstract_equal(a, b)
    if opcode == "beq" or eq is None:
        return eq
    return not eq


def _evaluate(ins: Instruction, words, same_register: bool) -> Outcome:
    if any(w.has_bottom() for w in words):
        return UNKNOWN
    if same_register:
        decided = {"slt": False, "blt": False, "bge": True, "beq": True, "bne": False}[ins.opcode]
    else:
        decided = _decide(ins.opcode, words)
    if decided is None:
        return UNKNOWN
    if ins.is_branch:
        return Outcome("taken" if decided else "not-taken")
    return Outcome("value", int(decided))


def _flipped_operands(ins: Instruction, state, width: int, reg: int, bit: int) -> list:
    words = []
    for src in ins.srcs:
        word = operand_word(src, state, width)
        if isinstance(src, Reg) and src.index == reg:
            word = word.flip(bit)
        words.append(word)
    return words


def _same_register(ins: Instruction) -> bool:
    return len(ins.srcs) == 2 and isinstance(ins.srcs[0], Reg) and ins.srcs[0] == ins.srcs[1]


def partial_eval_with_flip(prog: Program, p: int, reg: int, bit: int,
                           bitvalues: BitValueMap) -> Outcome:
    """Evaluate the comparison at p with bit ``bit`` of ``reg`` flipped in its
    abstract at-read value; determinate only if every concretization agrees."""
    ins = prog.instructions[p]
    if ins.opcode not in COMPARATORS or reg not in ins.reads:
        return UNKNOWN
    words = _flipped_operands(ins, bitvalues.before[p], prog.width, reg, bit)
    return _evaluate(ins, words, _same_register(ins))


def golden_outcome(prog: Program, p: int, bitvalues: BitValueMap) -> Outcome:
    ins = prog.instructions[p]
    words = [operand_word(s, bitvalues.before[p], prog.width) for s in ins.srcs]
    return _evaluate(ins, words, _same_register(ins))


# Effect of flipping one read bit on the instruction's own result.
UNCHANGED = ("unchanged",)


def flip_effect(prog: Program, p: int, reg: int, bit: int, bitvalues: BitValueMap) -> tuple:
    """Classify what a flip of ``reg``'s bit does to point p's result.

    Returns UNCHANGED, ("bit", k) when exactly result bit k flips, an
    ("outcome", Outcome) for comparators that become determinate, or None
    when nothing can be said.
    """
    ins = prog.instructions[p]
    op = ins.opcode
    state = bitvalues.before[p]
    w = prog.width
    positions = [k for k, s in enumerate(ins.srcs) if isinstance(s, Reg) and s.index == reg]
    if not positions:
        return None
    if op == "mv":
        return ("bit", bit)
    if op in ("and", "or", "xor"):
        if len(positions) == 2:
            return UNCHANGED if op == "xor" else ("bit", bit)
        other = operand_word(ins.srcs[1 - positions[0]], state, w)[bit]
        if op == "xor":
            return ("bit", bit)
        absorbing, neutral = (ZERO, ONE) if op == "and" else (ONE, ZERO)
        if other == absorbing:
            return UNCHANGED
        if other == neutral:
            return ("bit", bit)
        return None
    if op in ("shl", "shr"):
        if 1 in positions:
            return None
        amount = operand_word(ins.srcs[1], state, w)
        if amount.has_bottom():
            return None
        low = amount.min_unsigned()
        if op == "shr":
            if bit < low:
                return UNCHANGED
            return ("bit", bit - low) if amount.is_const() else None
        if bit + low >= w:
            return UNCHANGED
        return ("bit", bit + low) if amount.is_const() else None
    if op in COMPARATORS:
        flipped = partial_eval_with_flip(prog, p, reg, bit, bitvalues)
        if not flipped.determinate:
            return None
        if flipped == golden_outcome(prog, p, bitvalues):
            return UNCHANGED
        return ("outcome", flipped)
    return None


# ---------------------------------------------------------------------------
# The iterative analysis

@dataclass
class CoalesceResult:
    analysis: Analysis
    bitvalues: BitValueMap
    relation: EquivRelation
    iterations: int
    class_history: tuple

    @property
    def program(self) -> Program:
        return self.analysis.program

    def site_index(self, site: FaultSite) -> int:
        try:
            return self.relation.index[site]
        except KeyError:
            raise CoalesceError(f"unknown fault site {site}") from None

    def read_root(self, p: int, v: int, bit: int) -> int:
        return self.relation.find(self.site_index(FaultSite(p, v, bit, READ)))

    def read_masked(self, p: int, v: int, bit: int) -> bool:
        return self.read_root(p, v, bit) == 0

    def masked_after(self, p: int, v: int, bit: int) -> bool:
        """Is a flip of v's bit right after point p provably harmless?"""
        du = self.analysis.defuse
        if v in du.gwrite[p]:
            return self.relation.find(self.site_index(FaultSite(p, v, bit, WRITE))) == 0
        return _lingering_masked(self.relation, du, p, v, bit)

    def site_name(self, site: FaultSite) -> str:
        du = self.analysis.defuse
        both = site.reg in du.gread[site.point] and site.reg in du.gwrite[site.point]
        return site.ident(both)

    def to_json(self) -> dict:
        classes = []
        for k, members in enumerate(self.relation.classes()):
            entry = {"id": k}
            if k == 0:
                entry["label"] = "masked"
            entry["sites"] = [self.site_name(self.relation.sites[i - 1]) for i in members if i != 0]
            classes.append(entry)
        return {
            "function": self.program.name,
            "sites": len(self.relation.sites),
            "iterations": self.iterations,
            "classes": classes,
        }


def _lingering_masked(rel: EquivRelation, du, p: int, v: int, bit: int) -> bool:
    """A flip of v left behind after p (which reads but does not write v) is
    masked when v is dead there or every later read of it is masked."""
    if v in du.gkill[p]:
        return True
    uses = du.uses(p, v)
    return bool(uses) and all(
        rel.find(rel.index[FaultSite(q, v, bit, READ)]) == 0 for q in uses)


def init_fault_indices(analysis: Analysis) -> EquivRelation:
    """Sites for every accessed (p, v, bit).  Write sites of registers dead
    after the write start in the masked class; read sites always start fresh
    because the read still consumes the flipped value."""
    prog = analysis.program
    du = analysis.defuse
    sites = []
    for p in range(len(prog.instructions)):
        for v in sorted(du.gread[p] | du.gwrite[p]):
            for i in range(prog.width):
                if v in du.gread[p]:
                    sites.append(FaultSite(p, v, i, READ))
                if v in du.gwrite[p]:
                    sites.append(FaultSite(p, v, i, WRITE))
    rel = EquivRelation(sorted(sites))
    for s in rel.sites:
        if s.kind == WRITE and s.reg in du.gkill[s.point]:
            rel.merge(0, rel.index[s])
    return rel


class FlipEffects:
    """Per-site flip effects; they only depend on the (fixed) bit values."""

    def __init__(self, prog: Program, bitvalues: BitValueMap):
        self.prog = prog
        self.bitvalues = bitvalues
        self.cache = {}

    def __call__(self, p: int, v: int, bit: int):
        key = (p, v, bit)
        if key not in self.cache:
            self.cache[key] = flip_effect(self.prog, p, v, bit, self.bitvalues)
        return self.cache[key]


def intra_instruction_coalesce(p: int, analysis: Analysis, rel: EquivRelation, effects) -> list:
    """Merges justified by point p alone, as index pairs against ``rel``.

    Applying the returned pairs to a copy of ``rel`` gives the temporary
    relation for p.
    """
    prog = analysis.program
    du = analysis.defuse
    ins = prog.instructions[p]
    pairs, groups = [], {}
    for v in ins.reads:
        dead_after = v in du.gwrite[p] or v in du.gkill[p]
        for i in range(prog.width):
            site = rel.index[FaultSite(p, v, i, READ)]
            eff = effects(p, v, i)
            if eff is None:
                continue
            if eff == UNCHANGED:
                if dead_after or _lingering_masked(rel, du, p, v, i):
                    pairs.append((0, site))
            elif dead_after:
                groups.setdefault(eff, []).append(site)
    for members in groups.values():
        pairs.extend((members[0], other) for other in members[1:])
    return pairs


def _temporary_classes(rel: EquivRelation, pairs: list) -> dict:
    """Base root -> frozenset of base roots merged together by ``pairs``."""
    parent = {}

    def find(x):
        while parent.get(x, x) != x:
            x = parent[x]
        return x

    for a, b in pairs:
        ra, rb = find(rel.find(a)), find(rel.find(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for x in list(parent):
        groups.setdefault(find(x), set()).add(x)
    out = {}
    for root, members in groups.items():
        members.add(root)
        frozen = frozenset(members)
        for m in members:
            out[m] = frozen
    return out


def inter_instruction_merge(analysis: Analysis, rel: EquivRelation, temp: dict,
                            order=None) -> list:
    """Merges of write sites into the class every later read agrees on.

    ``temp`` maps each point q to the output of :func:`_temporary_classes`
    for q's intra merges.
    """
    prog = analysis.program
    du = analysis.defuse
    pairs = []
    points = order if order is not None else range(len(prog.instructions))
    for p in points:
        for v in prog.instructions[p].writes:
            if v in du.gkill[p]:
                continue
            uses = du.uses(p, v)
            if not uses:
                continue
            for i in range(prog.width):
                common = None
                for q in sorted(uses):
                    root = rel.find(rel.index[FaultSite(q, v, i, READ)])
                    members = temp[q].get(root, frozenset((root,)))
                    common = members if common is None else common & members
                    if not common:
                        break
                if common:
                    pairs.append((min(common), rel.index[FaultSite(p, v, i, WRITE)]))
    return pairs


def coalesce_iteration(analysis: Analysis, rel: EquivRelation, effects, order=None) -> int:
    """One intra phase over all points followed by the inter phase.

    The intra merges are computed against the relation as it stood at the
    start of the iteration; returns the number of classes that disappeared.
    """
    n = len(analysis.program.instructions)
    points = list(order) if order is not None else list(range(n))
    intra = {p: intra_instruction_coalesce(p, analysis, rel, effects) for p in points}
    temp = {p: _temporary_classes(rel, intra[p]) for p in points}
    inter = inter_instruction_merge(analysis, rel, temp, points)
    before = rel.n_classes
    for p in points:
        for a, b in intra[p]:
            rel.merge(a, b)
    for a, b in inter:
        rel.merge(a, b)
    return before - rel.n_classes


def run_coalescing(prog: Program, analysis: Optional[Analysis] = None,
                   bitvalues: Optional[BitValueMap] = None,
                   visit_seed: Optional[int] = None) -> CoalesceResult:
    analysis = analysis or analyze_structure(prog, warn=False)
    bitvalues = bitvalues or analyze_bit_values(prog, analysis.cfg)
    rel = init_fault_indices(analysis)
    effects = FlipEffects(prog, bitvalues)
    rng = random.Random(visit_seed) if visit_seed is not None else None
    history = [rel.n_classes]
    bound = len(rel.sites) + 1
    iterations = 0
    while True:
        iterations += 1
        if iterations > bound:
            raise CoalesceError("coalescing did not converge within |S| iterations")
        order = list(range(len(prog.instructions)))
        if rng:
            rng.shuffle(order)
        merged = coalesce_iteration(analysis, rel, effects, order)
        history.append(rel.n_classes)
        if merged == 0:
            break
    return CoalesceResult(analysis, bitvalues, rel, iterations, tuple(history))
