"""Mini-ISA, the BECIR text format, control-flow graph and def-use bookkeeping.

A program is a single function made of labelled basic blocks.  Every
instruction gets a global id (its program point) in textual order, and the
CFG is built directly over those ids.
"""

from __future__ import annotations

import re
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

BINARY_OPS = ("and", "or", "xor", "add", "sub", "shl", "shr", "slt")
UNARY_OPS = ("mv", "seqz")
BRANCH_OPS = ("beq", "bne", "blt", "bge")
TERMINATORS = BRANCH_OPS + ("jmp", "ret")
OPCODES = ("li",) + UNARY_OPS + BINARY_OPS + TERMINATORS

DEFAULT_WIDTH = 8
MIN_WIDTH, MAX_WIDTH = 4, 64


class BecirError(Exception):
    """Base class for every error raised while loading or analyzing a program."""


class ParseError(BecirError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"line {line}, col {col}: " if line else ""
        super().__init__(where + message)


class PossiblyUndefinedWarning(UserWarning):
    pass


@dataclass(frozen=True, order=True)
class Reg:
    index: int

    def __str__(self) -> str:
        return f"r{self.index}"


@dataclass(frozen=True, order=True)
class Imm:
    value: int

    def __str__(self) -> str:
        return str(self.value)


Operand = Union[Reg, Imm]


@dataclass(frozen=True)
class Instruction:
    opcode: str
    dst: Optional[int] = None
    srcs: tuple = ()
    target: Optional[str] = None
    line: int = field(default=0, compare=False)

    @property
    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    @property
    def is_branch(self) -> bool:
        return self.opcode in BRANCH_OPS

    @cached_property
    def reads(self) -> tuple:
        """Distinct registers read, in operand order."""
        seen = []
        for src in self.srcs:
            if isinstance(src, Reg) and src.index not in seen:
                seen.append(src.index)
        return tuple(seen)

    @property
    def writes(self) -> tuple:
        return () if self.dst is None else (self.dst,)

    def text(self) -> str:
        ops = ", ".join(str(s) for s in self.srcs)
        if self.opcode in BRANCH_OPS:
            return f"{self.opcode} {ops}, {self.target}"
        if self.opcode == "jmp":
            return f"jmp {self.target}"
        if self.opcode == "ret":
            return f"ret {ops}"
        return f"r{self.dst} = {self.opcode} {ops}"

    def __str__(self) -> str:
        return self.text()


@dataclass(frozen=True)
class Block:
    label: str
    instructions: tuple

    @property
    def terminator(self) -> Optional[Instruction]:
        if self.instructions and self.instructions[-1].is_terminator:
            return self.instructions[-1]
        return None


@dataclass(frozen=True)
class Program:
    name: str
    args: tuple
    width: int
    regs: int
    blocks: tuple

    @property
    def entry(self) -> str:
        return self.blocks[0].label

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1

    @cached_property
    def instructions(self) -> tuple:
        return tuple(ins for blk in self.blocks for ins in blk.instructions)

    @cached_property
    def block_starts(self) -> dict:
        """Map label -> program point of the block's first instruction."""
        starts, point = {}, 0
        for blk in self.blocks:
            starts[blk.label] = point
            point += len(blk.instructions)
        return starts

    @cached_property
    def block_of(self) -> tuple:
        """Block index for every program point."""
        out = []
        for idx, blk in enumerate(self.blocks):
            out.extend([idx] * len(blk.instructions))
        return tuple(out)

    def block_points(self, index: int) -> range:
        start = self.block_starts[self.blocks[index].label]
        return range(start, start + len(self.blocks[index].instructions))

    def __len__(self) -> int:
        return len(self.instructions)

    def structurally_equal(self, other: "Program") -> bool:
        return (self.name, self.args, self.width, self.regs, self.blocks) == (
            other.name, other.args, other.width, other.regs, other.blocks)


# ---------------------------------------------------------------------------
# Text format

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)"
    r"|(?P<num>0[xX][0-9a-fA-F]+|0[bB][01]+|\d+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)"
    r"|(?P<punct>[{}:,=])"
)
_REG_RE = re.compile(r"r(\d+)$")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, width: Optional[int], regs: Optional[int]):
        self.toks = _tokenize(text)
        self.i = 0
        self.width_override = width
        self.regs_override = regs

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: Optional[_Tok] = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def next(self) -> _Tok:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            got = self.tok.text or "end of input"
            self.error(f"expected {text!r}, got {got!r}")
        return self.next()

    def at_keyword(self, word: str) -> bool:
        return self.tok.kind == "ident" and self.tok.text == word

    def number(self) -> tuple:
        tok = self.tok
        if tok.kind != "num":
            self.error(f"expected a number, got {tok.text or 'end of input'!r}")
        self.next()
        text = tok.text.lower()
        return (int(text, 0) if text[:2] in ("0x", "0b") else int(text, 10)), tok

    def register(self) -> tuple:
        tok = self.tok
        m = _REG_RE.match(tok.text) if tok.kind == "ident" else None
        if m is None:
            self.error(f"expected a register, got {tok.text or 'end of input'!r}")
        self.next()
        return int(m.group(1)), tok

    def operand(self) -> tuple:
        if self.tok.kind == "num":
            value, tok = self.number()
            return Imm(value), tok
        index, tok = self.register()
        return Reg(index), tok

    def label(self) -> _Tok:
        tok = self.tok
        if tok.kind != "ident":
            self.error(f"expected a label, got {tok.text or 'end of input'!r}")
        return self.next()

    def parse(self) -> tuple:
        self.expect("func")
        name = self.label().text
        args, width, regs = [], None, None
        while not self.tok.text == "{":
            if self.at_keyword("args"):
                self.next()
                if self.tok.kind == "ident" and _REG_RE.match(self.tok.text):
                    args.append(self.register())
                    while self.tok.text == ",":
                        self.next()
                        args.append(self.register())
            elif self.at_keyword("width"):
                self.next()
                width, wtok = self.number()
                if not MIN_WIDTH <= width <= MAX_WIDTH:
                    self.error(f"width {width} outside {MIN_WIDTH}..{MAX_WIDTH}", wtok)
            elif self.at_keyword("regs"):
                self.next()
                regs, rtok = self.number()
                if regs < 1:
                    self.error("regs must be at least 1", rtok)
            else:
                self.error(f"unexpected {self.tok.text or 'end of input'!r} in function header")
        self.expect("{")
        raw_blocks = []
        while self.at_keyword("bb"):
            self.next()
            ltok = self.label()
            self.expect(":")
            instrs = []
            while not (self.at_keyword("bb") or self.tok.text == "}" or self.tok.kind == "eof"):
                instrs.append(self.instruction())
            raw_blocks.append((ltok, instrs))
        if not raw_blocks:
            self.error("function has no basic blocks")
        self.expect("}")
        if self.tok.kind != "eof":
            self.error(f"trailing input {self.tok.text!r}")
        return name, args, width, regs, raw_blocks

    def instruction(self) -> tuple:
        """Returns (Instruction, operand tokens, label token or None)."""
        tok = self.tok
        if tok.kind != "ident":
            self.error(f"expected an instruction, got {tok.text or 'end of input'!r}")
        if tok.text in BRANCH_OPS:
            self.next()
            a, at = self.operand()
            self.expect(",")
            b, bt = self.operand()
            self.expect(",")
            lt = self.label()
            return Instruction(tok.text, None, (a, b), lt.text, tok.line), [at, bt], lt
        if tok.text == "jmp":
            self.next()
            lt = self.label()
            return Instruction("jmp", None, (), lt.text, tok.line), [], lt
        if tok.text == "ret":
            self.next()
            a, at = self.operand()
            return Instruction("ret", None, (a,), None, tok.line), [at], None
        if _REG_RE.match(tok.text):
            dst, dtok = self.register()
            self.expect("=")
            optok = self.tok
            op = optok.text
            if optok.kind != "ident" or op not in ("li",) + UNARY_OPS + BINARY_OPS:
                self.error(f"unknown opcode {op!r}")
            self.next()
            if op == "li":
                value, vt = self.number()
                return Instruction("li", dst, (Imm(value),), None, tok.line), [dtok, vt], None
            a, at = self.operand()
            if op in UNARY_OPS:
                return Instruction(op, dst, (a,), None, tok.line), [dtok, at], None
            self.expect(",")
            b, bt = self.operand()
            return Instruction(op, dst, (a, b), None, tok.line), [dtok, at, bt], None
        self.error(f"unknown opcode {tok.text!r}")


def parse_program(text: str, width: Optional[int] = None, regs: Optional[int] = None) -> Program:
    """Parse and validate BECIR source.

    ``width``/``regs`` act as overrides: when the header also states a value
    the two must agree.  A header without ``width`` defaults to 8 bits, and
    without ``regs`` to one more than the highest register mentioned.
    """
    p = _Parser(text, width, regs)
    name, args, hdr_width, hdr_regs, raw_blocks = p.parse()

    if width is not None and hdr_width is not None and width != hdr_width:
        raise ParseError(f"--width {width} does not match header width {hdr_width}")
    if regs is not None and hdr_regs is not None and regs != hdr_regs:
        raise ParseError(f"--regs {regs} does not match header regs {hdr_regs}")
    w = hdr_width if hdr_width is not None else (width if width is not None else DEFAULT_WIDTH)
    if not MIN_WIDTH <= w <= MAX_WIDTH:
        raise ParseError(f"width {w} outside {MIN_WIDTH}..{MAX_WIDTH}")
    mentioned = [idx for idx, _ in args]
    for _, instrs in raw_blocks:
        for ins, optoks, _ in instrs:
            mentioned.extend(ins.writes)
            mentioned.extend(s.index for s in ins.srcs if isinstance(s, Reg))
    m = hdr_regs if hdr_regs is not None else regs
    if m is None:
        m = max(mentioned, default=0) + 1

    for idx, tok in args:
        if idx >= m:
            raise ParseError(f"register r{idx} out of range (regs {m})", tok.line, tok.col)

    labels = {}
    for ltok, _ in raw_blocks:
        if ltok.text in labels:
            raise ParseError(f"duplicate label {ltok.text!r}", ltok.line, ltok.col)
        labels[ltok.text] = ltok

    blocks = []
    for bi, (ltok, instrs) in enumerate(raw_blocks):
        if not instrs:
            raise ParseError(f"empty block {ltok.text!r}", ltok.line, ltok.col)
        for k, (ins, optoks, lt) in enumerate(instrs):
            if ins.is_terminator and k != len(instrs) - 1:
                raise ParseError(f"instruction after terminator in block {ltok.text!r}",
                                 instrs[k + 1][0].line, 1)
            operands = ([Reg(ins.dst)] if ins.dst is not None else []) + list(ins.srcs)
            for opnd, otok in zip(operands, optoks):
                if isinstance(opnd, Reg) and opnd.index >= m:
                    raise ParseError(f"register r{opnd.index} out of range (regs {m})",
                                     otok.line, otok.col)
                if isinstance(opnd, Imm) and opnd.value >= (1 << w):
                    raise ParseError(f"immediate {opnd.value} does not fit in width {w}",
                                     otok.line, otok.col)
            if ins.target is not None and ins.target not in labels:
                raise ParseError(f"undefined label {ins.target!r}", lt.line, lt.col)
        last = instrs[-1][0]
        falls = last.opcode not in ("jmp", "ret")
        if falls and bi == len(raw_blocks) - 1:
            raise ParseError(f"block {ltok.text!r} falls through past the end of the function",
                             ltok.line, ltok.col)
        blocks.append(Block(ltok.text, tuple(ins for ins, _, _ in instrs)))

    prog = Program(name, tuple(idx for idx, _ in args), w, m, tuple(blocks))
    cfg = build_cfg(prog)
    seen = cfg.reachable()
    for blk in prog.blocks:
        if prog.block_starts[blk.label] not in seen:
            ltok = labels[blk.label]
            raise ParseError(f"unreachable block {blk.label!r}", ltok.line, ltok.col)
    return prog


def program_to_text(prog: Program) -> str:
    header = f"func {prog.name}"
    if prog.args:
        header += " args " + ",".join(f"r{a}" for a in prog.args)
    header += f" width {prog.width} regs {prog.regs} {{"
    lines = [header]
    for blk in prog.blocks:
        lines.append(f"bb {blk.label}:")
        lines.extend("  " + ins.text() for ins in blk.instructions)
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Control flow

@dataclass(frozen=True)
class CFG:
    program: Program
    succ: tuple
    pred: tuple
    entry: int
    exits: tuple

    @property
    def nodes(self) -> range:
        return range(len(self.succ))

    @property
    def edges(self) -> list:
        return [(a, b) for a in self.nodes for b in self.succ[a]]

    def reachable(self) -> set:
        seen, stack = {self.entry}, [self.entry]
        while stack:
            for s in self.succ[stack.pop()]:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return seen

    @cached_property
    def reverse_post_order(self) -> tuple:
        order, seen = [], set()
        stack = [(self.entry, iter(self.succ[self.entry]))]
        seen.add(self.entry)
        while stack:
            node, it = stack[-1]
            for s in it:
                if s not in seen:
                    seen.add(s)
                    stack.append((s, iter(self.succ[s])))
                    break
            else:
                stack.pop()
                order.append(node)
        return tuple(reversed(order))


def build_cfg(prog: Program) -> CFG:
    n = len(prog.instructions)
    succ = [[] for _ in range(n)]
    for bi, blk in enumerate(prog.blocks):
        points = prog.block_points(bi)
        for k, point in enumerate(points):
            ins = blk.instructions[k]
            fall = point + 1 if point + 1 < n else None
            if ins.opcode == "ret":
                continue
            if ins.opcode == "jmp":
                succ[point].append(prog.block_starts[ins.target])
            elif ins.is_branch:
                succ[point].append(prog.block_starts[ins.target])
                if fall is not None and fall not in succ[point]:
                    succ[point].append(fall)
            elif fall is not None:
                succ[point].append(fall)
    pred = [[] for _ in range(n)]
    for a in range(n):
        for b in succ[a]:
            pred[b].append(a)
    exits = tuple(p for p, ins in enumerate(prog.instructions) if ins.opcode == "ret")
    return CFG(prog, tuple(map(tuple, succ)), tuple(map(tuple, pred)), 0, exits)


# ---------------------------------------------------------------------------
# Access sets and liveness

@dataclass(frozen=True)
class AccessSets:
    gread: tuple
    gwrite: tuple
    gkill: tuple
    live_in: tuple
    live_out: tuple

    def accessed(self, p: int) -> frozenset:
        return self.gread[p] | self.gwrite[p]


def liveness(cfg: CFG) -> tuple:
    """Backward liveness to a fixed point; returns (live_in, live_out)."""
    prog = cfg.program
    n = len(prog.instructions)
    reads = [frozenset(ins.reads) for ins in prog.instructions]
    writes = [frozenset(ins.writes) for ins in prog.instructions]
    live_in = [frozenset()] * n
    live_out = [frozenset()] * n
    changed = True
    while changed:
        changed = False
        for p in reversed(range(n)):
            out = frozenset().union(*(live_in[s] for s in cfg.succ[p])) if cfg.succ[p] else frozenset()
            inn = reads[p] | (out - writes[p])
            if out != live_out[p] or inn != live_in[p]:
                live_out[p], live_in[p] = out, inn
                changed = True
    return tuple(live_in), tuple(live_out)


def compute_access_sets(cfg: CFG) -> AccessSets:
    prog = cfg.program
    gread = tuple(frozenset(ins.reads) for ins in prog.instructions)
    gwrite = tuple(frozenset(ins.writes) for ins in prog.instructions)
    live_in, live_out = liveness(cfg)
    gkill = tuple((gread[p] | gwrite[p]) - live_out[p] for p in range(len(gread)))
    return AccessSets(gread, gwrite, gkill, live_in, live_out)


# ---------------------------------------------------------------------------
# Def-use chains

@dataclass(frozen=True)
class DefUseIndex:
    access: AccessSets
    flowdef: dict
    flowuse: dict
    undefined_reads: tuple

    def defs(self, p: int, v: int) -> frozenset:
        return self.flowdef.get((p, v), frozenset())

    def uses(self, p: int, v: int) -> frozenset:
        return self.flowuse.get((p, v), frozenset())

    @property
    def gread(self):
        return self.access.gread

    @property
    def gwrite(self):
        return self.access.gwrite

    @property
    def gkill(self):
        return self.access.gkill


def compute_def_use(cfg: CFG, access: Optional[AccessSets] = None, warn: bool = True) -> DefUseIndex:
    """flowdef(p, v): writers of v reaching the read at p without an
    intervening write.  flowuse(p, v): reads of v reachable from p before the
    next write (the reading point itself may also write v)."""
    access = access or compute_access_sets(cfg)
    prog = cfg.program
    args = set(prog.args)
    flowdef, flowuse, undefined = {}, {}, []
    for p in cfg.nodes:
        for v in sorted(access.gread[p]):
            found, from_entry = set(), p == cfg.entry
            seen = set()
            todo = deque(cfg.pred[p])
            while todo:
                q = todo.popleft()
                if q in seen:
                    continue
                seen.add(q)
                if v in access.gwrite[q]:
                    found.add(q)
                    continue
                if q == cfg.entry:
                    from_entry = True
                todo.extend(cfg.pred[q])
            flowdef[(p, v)] = frozenset(found)
            if from_entry and v not in args:
                undefined.append((p, v))
        for v in sorted(access.gread[p] | access.gwrite[p]):
            found, seen = set(), set()
            todo = deque(cfg.succ[p])
            while todo:
                q = todo.popleft()
                if q in seen:
                    continue
                seen.add(q)
                if v in access.gread[q]:
                    found.add(q)
                if v in access.gwrite[q]:
                    continue
                todo.extend(cfg.succ[q])
            flowuse[(p, v)] = frozenset(found)
    if warn:
        for p, v in undefined:
            warnings.warn(f"possibly-undefined register r{v} read at p{p}", PossiblyUndefinedWarning,
                          stacklevel=2)
    return DefUseIndex(access, flowdef, flowuse, tuple(undefined))


@dataclass(frozen=True)
class Analysis:
    """Bundle of the structural analyses every later stage needs."""

    program: Program
    cfg: CFG
    access: AccessSets
    defuse: DefUseIndex


def analyze_structure(prog: Program, warn: bool = True) -> Analysis:
    cfg = build_cfg(prog)
    access = compute_access_sets(cfg)
    return Analysis(prog, cfg, access, compute_def_use(cfg, access, warn=warn))
