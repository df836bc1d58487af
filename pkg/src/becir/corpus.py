"""Seeded generator of small terminating BECIR programs.

The programs lean on the patterns the coalescing rules care about: constant
masks, constant shifts, xor/mv chains and compare-and-branch.  Every
program comes with input vectors and is checked to terminate and to keep
its full inject-on-read campaign within budget.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .faultsim import Simulator
from .ir import parse_program

MAX_POINTS = 30
MAX_RUNS = 10_000
MAX_GOLDEN_CYCLES = 1_000


@dataclass(frozen=True)
class CorpusProgram:
    name: str
    source: str
    inputs: tuple  # tuple of {reg: value} dicts


class _Gen:
    def __init__(self, rng: random.Random, width: int, regs: int):
        self.rng = rng
        self.w = width
        self.m = regs
        self.mask = (1 << width) - 1

    def imm(self) -> int:
        return self.rng.randrange(self.mask + 1)

    def mask_imm(self) -> int:
        rng, w = self.rng, self.w
        kind = rng.randrange(4)
        if kind == 0:
            return 1 << rng.randrange(w)
        if kind == 1:
            return (1 << rng.randrange(1, w)) - 1
        if kind == 2:
            return self.mask ^ ((1 << rng.randrange(1, w)) - 1)
        return self.imm()

    def operand(self, pool) -> str:
        return f"r{self.rng.choice(pool)}"

    def op(self, pool, dsts) -> str:
        """One random value-producing instruction."""
        rng = self.rng
        d = rng.choice(dsts)
        a = self.operand(pool)
        b = self.operand(pool)
        kind = rng.choices(
            ["mask", "shift", "xor", "or", "andr", "mv", "add", "sub", "slt", "seqz", "shiftr", "li"],
            weights=[6, 5, 3, 3, 2, 2, 3, 2, 2, 2, 1, 1])[0]
        if kind == "mask":
            return f"r{d} = and {a}, {self.mask_imm()}"
        if kind == "shift":
            return f"r{d} = {rng.choice(['shl', 'shr'])} {a}, {rng.randrange(1, self.w)}"
        if kind == "xor":
            return f"r{d} = xor {a}, {rng.choice([b, str(self.imm())])}"
        if kind == "or":
            return f"r{d} = or {a}, {rng.choice([b, str(self.mask_imm())])}"
        if kind == "andr":
            return f"r{d} = and {a}, {b}"
        if kind == "mv":
            return f"r{d} = mv {a}"
        if kind == "add":
            return f"r{d} = add {a}, {rng.choice([b, str(self.imm())])}"
        if kind == "sub":
            return f"r{d} = sub {a}, {rng.choice([b, str(self.imm())])}"
        if kind == "slt":
            return f"r{d} = slt {rng.choice([a, '0'])}, {b}"
        if kind == "seqz":
            return f"r{d} = seqz {a}"
        if kind == "shiftr":
            return f"r{d} = {rng.choice(['shl', 'shr'])} {a}, {b}"
        return f"r{d} = li {self.imm()}"

    def branch(self, pool, label) -> str:
        rng = self.rng
        op = rng.choice(["beq", "bne", "blt", "bge"])
        a = self.operand(pool)
        b = rng.choice([self.operand(pool), str(rng.choice([0, 1, self.imm()]))])
        return f"{op} {a}, {b}, {label}"

    def program(self, name: str) -> str:
        rng = self.rng
        regs = list(range(self.m))
        args = sorted(rng.sample(regs, rng.choice([1, 1, 2])))
        shape = rng.choices(["straight", "loop", "diamond", "loop-diamond"], weights=[2, 4, 3, 3])[0]
        lines = []
        header = f"func {name}"
        header += " args " + ",".join(f"r{a}" for a in args)
        header += f" width {self.w} regs {self.m} {{"
        lines.append(header)
        lines.append("bb entry:")
        for r in regs:
            if r not in args:
                lines.append(f"  r{r} = li {self.imm()}")
        loops = shape in ("loop", "loop-diamond")
        counter = None
        body_regs = regs
        if loops:
            counter = rng.choice([r for r in regs if r not in args] or regs)
            body_regs = [r for r in regs if r != counter]
            lines = [ln for ln in lines if not ln.startswith(f"  r{counter} = li")]
            trips = rng.randint(2, min(4, self.mask))
            lines.append(f"  r{counter} = li {trips}")
        for _ in range(rng.randint(0, 3)):
            lines.append("  " + self.op(regs if not loops else body_regs, body_regs))
        if shape == "straight":
            for _ in range(rng.randint(3, 10)):
                lines.append("  " + self.op(regs, regs))
        elif shape == "diamond":
            lines.append("  " + self.branch(regs, "join"))
            lines.append("bb then:")
            for _ in range(rng.randint(1, 5)):
                lines.append("  " + self.op(regs, regs))
            lines.append("bb join:")
            for _ in range(rng.randint(1, 5)):
                lines.append("  " + self.op(regs, regs))
        else:
            lines.append("bb loop:")
            for _ in range(rng.randint(2, 6)):
                lines.append("  " + self.op(regs, body_regs))
            if shape == "loop-diamond":
                lines.append("  " + self.branch(regs, "skip"))
                lines.append("bb mid:")
                for _ in range(rng.randint(1, 3)):
                    lines.append("  " + self.op(regs, body_regs))
                lines.append("bb skip:")
                for _ in range(rng.randint(0, 2)):
                    lines.append("  " + self.op(regs, body_regs))
            lines.append(f"  r{counter} = sub r{counter}, 1")
            lines.append(f"  bne r{counter}, 0, loop")
            lines.append("bb exit:")
            for _ in range(rng.randint(0, 3)):
                lines.append("  " + self.op(regs, regs))
        lines.append(f"  ret r{rng.choice(body_regs)}")
        lines.append("}")
        return "\n".join(lines) + "\n", args


def _has_mask_idiom(prog) -> bool:
    from .ir import Imm
    for ins in prog.instructions:
        if ins.opcode == "and" and any(isinstance(s, Imm) for s in ins.srcs):
            return True
        if ins.opcode in ("shl", "shr") and isinstance(ins.srcs[1], Imm):
            return True
    return False


def has_mask_idiom(source: str) -> bool:
    return _has_mask_idiom(parse_program(source))


def gen_corpus(seed: int, count: int, widths=(4, 8), regs: int = 4, max_points: int = MAX_POINTS,
               max_runs: int = MAX_RUNS, inputs_per_program: int = 2) -> list:
    """Deterministic list of CorpusProgram for (seed, count)."""
    out = []
    for index in range(count):
        rng = random.Random(f"becir-corpus:{seed}:{index}")
        width = widths[index % len(widths)]
        gen = _Gen(rng, width, regs)
        while True:
            name = f"g{index:04d}"
            source, args = gen.program(name)
            prog = parse_program(source)
            if len(prog.instructions) > max_points:
                continue
            vectors = []
            ok = True
            for _ in range(inputs_per_program):
                vec = {a: gen.imm() for a in args}
                try:
                    sim = Simulator(prog, vec)
                except Exception:
                    ok = False
                    break
                reads = sum(len(prog.instructions[ev.point].reads) for ev in sim.golden.events)
                if sim.length > MAX_GOLDEN_CYCLES or reads * width > max_runs:
                    ok = False
                    break
                vectors.append(vec)
            if ok:
                break
        out.append(CorpusProgram(name, source, tuple(vectors)))
    return out


def write_corpus(programs, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for cp in programs:
        (directory / f"{cp.name}.bir").write_text(cp.source)
        manifest.append({
            "name": cp.name,
            "file": f"{cp.name}.bir",
            "inputs": [{f"r{r}": v for r, v in sorted(vec.items())} for vec in cp.inputs],
        })
    (directory / "manifest.json").write_text(json.dumps({"programs": manifest}, indent=2) + "\n")


def load_corpus(directory) -> list:
    directory = Path(directory)
    data = json.loads((directory / "manifest.json").read_text())
    out = []
    for entry in data["programs"]:
        vectors = tuple({int(k[1:]): v for k, v in vec.items()} for vec in entry["inputs"])
        out.append(CorpusProgram(entry["name"], (directory / entry["file"]).read_text(), vectors))
    return out
