import itertools
from importlib import resources
from pathlib import Path

import pytest

from becir.ir import parse_program

FIXTURE_DIR = Path(__file__).parent / "fixtures"
SCHEMA_DIR = Path(resources.files("becir") / "schemas")


def fixture_inputs(text: str) -> list:
    """Input vectors from the ``# inputs: r0=1 r1=2 | r0=3 ...`` header line."""
    first = text.splitlines()[0]
    assert first.startswith("# inputs:")
    vectors = []
    for group in first[len("# inputs:"):].split("|"):
        vec = {}
        for item in group.split():
            reg, value = item.split("=")
            vec[int(reg[1:])] = int(value)
        vectors.append(vec)
    return vectors


def load_fixtures() -> list:
    out = []
    for path in sorted(FIXTURE_DIR.glob("*.bir")):
        text = path.read_text()
        out.append((path.stem, parse_program(text), fixture_inputs(text)))
    return out


FIXTURES = load_fixtures()


def builtin(name: str):
    return parse_program((resources.files("becir") / "data" / f"{name}.bir").read_text())


@pytest.fixture(scope="session")
def motivating():
    return builtin("motivating")


def simple_paths(succ, start, max_len):
    """All simple paths (node lists) starting at ``start``."""
    stack = [[start]]
    while stack:
        path = stack.pop()
        yield path
        if len(path) >= max_len:
            continue
        for s in succ[path[-1]]:
            if s not in path:
                stack.append(path + [s])


def all_words(width):
    from becir.bitvalue import AbstractBit, AbstractWord
    for bits in itertools.product(list(AbstractBit), repeat=width):
        yield AbstractWord(tuple(bits))
