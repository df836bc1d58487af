"""Four-valued bit lattice and the global forward known-bits analysis.

Each abstract bit is stored as the set of concrete values it may take,
encoded in two bits: bit 0 set means "may be 0", bit 1 set means "may be 1".
That makes the lattice order plain set inclusion and the meet a bitwise OR.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, Optional, Sequence

from .ir import CFG, BecirError, Imm, Program, analyze_structure


class AnalysisInconsistency(BecirError):
    pass


class AbstractBit(IntEnum):
    BOT = 0
    ZERO = 1
    ONE = 2
    TOP = 3

    @property
    def symbol(self) -> str:
        return ".01x"[self]

    @classmethod
    def from_symbol(cls, ch: str) -> "AbstractBit":
        return cls(".01x".index(ch))

    def gamma(self) -> frozenset:
        return frozenset(v for v in (0, 1) if self >> v & 1)

    @classmethod
    def alpha(cls, values: Iterable[int]) -> "AbstractBit":
        code = 0
        for v in values:
            code |= 1 << v
        return cls(code)

    def leq(self, other: "AbstractBit") -> bool:
        return self & other == self

    def flipped(self) -> "AbstractBit":
        return _FLIP[self]

    @property
    def known(self) -> bool:
        return self in (AbstractBit.ZERO, AbstractBit.ONE)


BOT, ZERO, ONE, TOP = AbstractBit.BOT, AbstractBit.ZERO, AbstractBit.ONE, AbstractBit.TOP
_FLIP = {BOT: BOT, ZERO: ONE, ONE: ZERO, TOP: TOP}
_ORDER = (BOT, ZERO, ONE, TOP)


def meet(a: AbstractBit, b: AbstractBit) -> AbstractBit:
    return AbstractBit(a | b)


# Rows/columns in the order BOT, ZERO, ONE, TOP.  An undefined input keeps the
# result undefined; otherwise a dominating constant forces the bit.
AND_TABLE = (
    (BOT, BOT, BOT, BOT),
    (BOT, ZERO, ZERO, ZERO),
    (BOT, ZERO, ONE, TOP),
    (BOT, ZERO, TOP, TOP),
)
OR_TABLE = (
    (BOT, BOT, BOT, BOT),
    (BOT, ZERO, ONE, TOP),
    (BOT, ONE, ONE, ONE),
    (BOT, TOP, ONE, TOP),
)
XOR_TABLE = (
    (BOT, BOT, BOT, BOT),
    (BOT, ZERO, ONE, TOP),
    (BOT, ONE, ZERO, TOP),
    (BOT, TOP, TOP, TOP),
)
BITWISE_TABLES = {"and": AND_TABLE, "or": OR_TABLE, "xor": XOR_TABLE}


@dataclass(frozen=True)
class AbstractWord:
    bits: tuple  # index 0 is the least significant bit

    @property
    def width(self) -> int:
        return len(self.bits)

    def __getitem__(self, i: int) -> AbstractBit:
        return self.bits[i]

    def __iter__(self):
        return iter(self.bits)

    @classmethod
    def const(cls, value: int, width: int) -> "AbstractWord":
        return cls(tuple(ONE if value >> i & 1 else ZERO for i in range(width)))

    @classmethod
    def top(cls, width: int) -> "AbstractWord":
        return cls((TOP,) * width)

    @classmethod
    def bottom(cls, width: int) -> "AbstractWord":
        return cls((BOT,) * width)

    @classmethod
    def parse(cls, text: str) -> "AbstractWord":
        """Parse an MSB-first string over '.', '0', '1', 'x'."""
        return cls(tuple(AbstractBit.from_symbol(ch) for ch in reversed(text)))

    @classmethod
    def alpha(cls, values: Iterable[int], width: int) -> "AbstractWord":
        codes = [0] * width
        for v in values:
            for i in range(width):
                codes[i] |= 1 << (v >> i & 1)
        return cls(tuple(AbstractBit(c) for c in codes))

    def __str__(self) -> str:
        return "".join(b.symbol for b in reversed(self.bits))

    def __repr__(self) -> str:
        return f"AbstractWord({str(self)!r})"

    def meet(self, other: "AbstractWord") -> "AbstractWord":
        return AbstractWord(tuple(AbstractBit(a | b) for a, b in zip(self.bits, other.bits)))

    def leq(self, other: "AbstractWord") -> bool:
        return all(a & b == a for a, b in zip(self.bits, other.bits))

    def has_bottom(self) -> bool:
        return BOT in self.bits

    def is_const(self) -> bool:
        return all(b.known for b in self.bits)

    def with_bit(self, i: int, bit: AbstractBit) -> "AbstractWord":
        bits = list(self.bits)
        bits[i] = bit
        return AbstractWord(tuple(bits))

    def flip(self, i: int) -> "AbstractWord":
        return self.with_bit(i, self.bits[i].flipped())

    def contains(self, value: int) -> bool:
        return all(b >> (value >> i & 1) & 1 for i, b in enumerate(self.bits))

    def gamma(self) -> list:
        """All concrete values described by the word (empty if any bit is BOT)."""
        values = [0]
        for i, b in enumerate(self.bits):
            values = [v | (c << i) for v in values for c in (0, 1) if b >> c & 1]
        return values

    def min_unsigned(self) -> int:
        if self.has_bottom():
            raise AnalysisInconsistency(f"min_unsigned of undefined bits in {self}")
        return sum(1 << i for i, b in enumerate(self.bits) if b == ONE)

    def max_unsigned(self) -> int:
        if self.has_bottom():
            raise AnalysisInconsistency(f"max_unsigned of undefined bits in {self}")
        return sum(1 << i for i, b in enumerate(self.bits) if b != ZERO)


def min_unsigned(word: AbstractWord) -> int:
    return word.min_unsigned()


# ---------------------------------------------------------------------------
# Transfer functions

@lru_cache(maxsize=None)
def _full_add_bit(a: AbstractBit, b: AbstractBit, c: AbstractBit) -> tuple:
    sums, carries = set(), set()
    for x in a.gamma():
        for y in b.gamma():
            for z in c.gamma():
                sums.add(x ^ y ^ z)
                carries.add((x & y) | (x & z) | (y & z))
    return AbstractBit.alpha(sums), AbstractBit.alpha(carries)


def _ripple(a: AbstractWord, b: AbstractWord, carry: AbstractBit) -> AbstractWord:
    out = []
    for x, y in zip(a.bits, b.bits):
        s, carry = _full_add_bit(x, y, carry)
        out.append(s)
    return AbstractWord(tuple(out))


def _bitwise(op: str, a: AbstractWord, b: AbstractWord) -> AbstractWord:
    table = BITWISE_TABLES[op]
    return AbstractWord(tuple(table[x][y] for x, y in zip(a.bits, b.bits)))


def _shift_const(op: str, a: AbstractWord, amount: int) -> AbstractWord:
    w = a.width
    if amount >= w:
        return AbstractWord.const(0, w)
    if op == "shl":
        return AbstractWord((ZERO,) * amount + a.bits[: w - amount])
    return AbstractWord(a.bits[amount:] + (ZERO,) * amount)


def _shift(op: str, a: AbstractWord, amount: AbstractWord) -> AbstractWord:
    w = a.width
    if amount.has_bottom():
        return AbstractWord.bottom(w)
    feasible = [k for k in range(w) if amount.contains(k)]
    if amount.max_unsigned() >= w:
        feasible.append(w)
    result = None
    for k in feasible:
        shifted = _shift_const(op, a, k)
        result = shifted if result is None else result.meet(shifted)
    return result


def abstract_less_than(a: AbstractWord, b: AbstractWord) -> Optional[bool]:
    """Unsigned a < b if decided by every concretization, else None."""
    if a.max_unsigned() < b.min_unsigned():
        return True
    if a.min_unsigned() >= b.max_unsigned():
        return False
    return None


def abstract_equal(a: AbstractWord, b: AbstractWord) -> Optional[bool]:
    if a.is_const() and b.is_const():
        return a == b
    for x, y in zip(a.bits, b.bits):
        if x.known and y.known and x != y:
            return False
    return None


def abstract_is_zero(a: AbstractWord) -> Optional[bool]:
    if any(b == ONE for b in a.bits):
        return False
    if all(b == ZERO for b in a.bits):
        return True
    return None


def _flag(decided: Optional[bool], width: int) -> AbstractWord:
    low = TOP if decided is None else (ONE if decided else ZERO)
    return AbstractWord((low,) + (ZERO,) * (width - 1))


def transfer(opcode: str, operands: Sequence[AbstractWord], width: int) -> AbstractWord:
    """Abstract result of a value-producing opcode on at-read operand words."""
    if opcode in ("li", "mv"):
        return operands[0]
    if opcode in BITWISE_TABLES:
        return _bitwise(opcode, operands[0], operands[1])
    if any(o.has_bottom() for o in operands):
        if opcode in ("shl", "shr") and not operands[1].has_bottom():
            return _shift(opcode, operands[0], operands[1])
        return AbstractWord.bottom(width)
    if opcode == "add":
        return _ripple(operands[0], operands[1], ZERO)
    if opcode == "sub":
        inverted = AbstractWord(tuple(b.flipped() for b in operands[1].bits))
        return _ripple(operands[0], inverted, ONE)
    if opcode in ("shl", "shr"):
        return _shift(opcode, operands[0], operands[1])
    if opcode == "seqz":
        return _flag(abstract_is_zero(operands[0]), width)
    if opcode == "slt":
        return _flag(abstract_less_than(operands[0], operands[1]), width)
    raise ValueError(f"opcode {opcode!r} produces no value")


def concrete_eval(opcode: str, args: Sequence[int], width: int) -> int:
    """Reference concrete semantics of value-producing opcodes."""
    mask = (1 << width) - 1
    a = args[0]
    b = args[1] if len(args) > 1 else 0
    if opcode in ("li", "mv"):
        return a & mask
    if opcode == "and":
        return a & b
    if opcode == "or":
        return a | b
    if opcode == "xor":
        return a ^ b
    if opcode == "add":
        return (a + b) & mask
    if opcode == "sub":
        return (a - b) & mask
    if opcode == "shl":
        return (a << b) & mask if b < width else 0
    if opcode == "shr":
        return a >> b if b < width else 0
    if opcode == "slt":
        return int(a < b)
    if opcode == "seqz":
        return int(a == 0)
    raise ValueError(f"opcode {opcode!r} produces no value")


def branch_taken(opcode: str, a: int, b: int) -> bool:
    if opcode == "beq":
        return a == b
    if opcode == "bne":
        return a != b
    if opcode == "blt":
        return a < b
    if opcode == "bge":
        return a >= b
    raise ValueError(f"{opcode!r} is not a conditional branch")


def operand_word(opnd, state: Sequence[AbstractWord], width: int) -> AbstractWord:
    if isinstance(opnd, Imm):
        return AbstractWord.const(opnd.value, width)
    return state[opnd.index]


# ---------------------------------------------------------------------------
# Global analysis

@dataclass(frozen=True)
class BitValueMap:
    """Known-bits solution.

    ``before[p]`` holds every register's word on entry to point p (the merge
    of all incoming definitions), ``after[p]`` the state once p has executed.
    """

    program: Program
    before: tuple
    after: tuple
    iterations: int

    def at_read(self, p: int, v: int) -> AbstractWord:
        return self.before[p][v]

    def after_write(self, p: int, v: int) -> AbstractWord:
        return self.after[p][v]

    def operand(self, p: int, k: int) -> AbstractWord:
        ins = self.program.instructions[p]
        return operand_word(ins.srcs[k], self.before[p], self.program.width)

    def to_json(self) -> dict:
        prog = self.program
        points = []
        for p, ins in enumerate(prog.instructions):
            points.append({
                "point": p,
                "instr": ins.text(),
                "read": {f"r{v}": str(self.before[p][v]) for v in ins.reads},
                "write": {f"r{v}": str(self.after[p][v]) for v in ins.writes},
            })
        return {"function": prog.name, "width": prog.width, "regs": prog.regs, "points": points}


def initial_state(prog: Program) -> tuple:
    return tuple(AbstractWord.top(prog.width) if r in prog.args else AbstractWord.bottom(prog.width)
                 for r in range(prog.regs))


def step(prog: Program, p: int, state: tuple) -> tuple:
    """Apply point p's transfer function to a full register state."""
    ins = prog.instructions[p]
    if ins.dst is None:
        return state
    ops = [operand_word(s, state, prog.width) for s in ins.srcs]
    out = list(state)
    out[ins.dst] = transfer(ins.opcode, ops, prog.width)
    return tuple(out)


def _meet_states(states) -> Optional[tuple]:
    result = None
    for st in states:
        if st is None:
            continue
        result = st if result is None else tuple(a.meet(b) for a, b in zip(result, st))
    return result


def analyze_bit_values(prog: Program, cfg: Optional[CFG] = None, defuse=None,
                       visit_seed: Optional[int] = None) -> BitValueMap:
    """MFP solution with a FIFO worklist seeded in reverse post-order.

    ``visit_seed`` shuffles the initial worklist and the order in which
    successors are queued; the fixed point does not depend on it.
    """
    cfg = cfg or analyze_structure(prog, warn=False).cfg
    n = len(prog.instructions)
    init = initial_state(prog)
    before = [None] * n
    after = [None] * n
    order = list(cfg.reverse_post_order)
    rng = random.Random(visit_seed) if visit_seed is not None else None
    if rng:
        rng.shuffle(order)
    queue = deque(order)
    queued = set(order)
    iterations = 0
    while queue:
        p = queue.popleft()
        queued.discard(p)
        iterations += 1
        incoming = [after[q] for q in cfg.pred[p]]
        if p == cfg.entry:
            incoming.append(init)
        inn = _meet_states(incoming)
        if inn is None:
            continue
        out = step(prog, p, inn)
        if before[p] is not None and not all(a.leq(b) for a, b in zip(before[p], inn)):
            raise AnalysisInconsistency(f"abstract state at p{p} moved down the lattice")
        before[p] = inn
        if out != after[p]:
            after[p] = out
            succs = list(cfg.succ[p])
            if rng:
                rng.shuffle(succs)
            for s in succs:
                if s not in queued:
                    queue.append(s)
                    queued.add(s)
    return BitValueMap(prog, tuple(before), tuple(after), iterations)


def is_fixed_point(bvm: BitValueMap, cfg: CFG) -> bool:
    """Re-apply every transfer once; True when nothing changes."""
    prog = bvm.program
    init = initial_state(prog)
    for p in cfg.nodes:
        incoming = [bvm.after[q] for q in cfg.pred[p]]
        if p == cfg.entry:
            incoming.append(init)
        inn = _meet_states(incoming)
        if inn != bvm.before[p] or step(prog, p, inn) != bvm.after[p]:
            return False
    return True
