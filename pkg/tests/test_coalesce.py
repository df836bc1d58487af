import pytest
from hypothesis import given, settings, strategies as st

from becir.bitvalue import analyze_bit_values
from becir.coalesce import (READ, UNCHANGED, WRITE, EquivRelation, FaultSite, FlipEffects, Outcome,
                            coalesce_iteration, flip_effect, init_fault_indices, run_coalescing)
from becir.corpus import gen_corpus
from becir.faultsim import (Simulator, dynamic_class_keys, enumerate_dynamic_fault_space, execute,
                            exhaustive_campaign, validate_equivalence)
from becir.ir import analyze_structure, parse_program

from conftest import FIXTURES


def test_equiv_relation_basics():
    sites = [FaultSite(0, 0, b, READ) for b in range(4)]
    rel = EquivRelation(sites)
    assert rel.n_classes == 5
    a, b, c = (rel.index[s] for s in sites[:3])
    assert rel.merge(c, a)
    assert not rel.merge(a, c)
    assert rel.find(c) == a  # root is the smallest index
    assert rel.merge(0, b)
    assert rel.find(b) == 0
    assert rel.n_classes == 3
    snapshot = rel.copy()
    rel.merge(a, b)
    assert snapshot.n_classes == 3 and rel.n_classes == 2
    assert sorted(len(c) for c in rel.classes()) == [1, 4]


def test_site_ident():
    assert FaultSite(3, 1, 2, READ).ident() == "p3:r1:2"
    assert FaultSite(3, 1, 2, WRITE).ident(both=True) == "p3:r1:2:w"


def test_flip_effects_on_motivating(motivating):
    bv = analyze_bit_values(motivating)
    eff = lambda p, v: [flip_effect(motivating, p, v, i, bv) for i in range(4)]
    # r2 = and r1, 1: only bit 0 survives the mask
    assert eff(2, 1) == [("bit", 0), UNCHANGED, UNCHANGED, UNCHANGED]
    assert eff(3, 1) == [("bit", 0), ("bit", 1), UNCHANGED, UNCHANGED]
    # r3 = slt 0, r3 with r3 = 00xx: setting bit 2 or 3 forces the outcome
    assert eff(6, 3)[2:] == [("outcome", Outcome("value", 1))] * 2
    assert eff(6, 3)[:2] == [None, None]
    # r2 = seqz r2 with r2 = 000x
    assert eff(5, 2)[0] is None
    assert eff(5, 2)[3] == ("outcome", Outcome("value", 0))
    # arithmetic and unresolved branches say nothing
    assert eff(4, 1) == [None] * 4
    assert eff(9, 1) == [None] * 4


def test_same_register_effects():
    prog = dict((n, p) for n, p, _ in FIXTURES)["same_register"]
    bv = analyze_bit_values(prog)
    assert flip_effect(prog, 0, 0, 1, bv) == UNCHANGED  # xor r0, r0
    assert flip_effect(prog, 1, 0, 1, bv) == ("bit", 1)  # and r0, r0
    assert flip_effect(prog, 2, 0, 1, bv) == UNCHANGED  # blt r0, r0 never taken


def test_motivating_convergence(motivating):
    res = run_coalescing(motivating)
    assert res.iterations == 2
    assert res.class_history == (85, 56, 56)
    assert len(res.relation.sites) == 84
    data = res.to_json()
    assert data["classes"][0]["label"] == "masked"
    masked = data["classes"][0]["sites"]
    # high bits of the seqz/slt flags are cleared by the and that combines them
    assert {"p5:r2:1:w", "p5:r2:3:w", "p6:r3:2:w"} <= set(masked)
    # r1 stays live after the mask, so the lingering flip still matters
    assert "p2:r1:3" not in masked


def test_init_puts_dead_writes_in_s0():
    prog = dict((n, p) for n, p, _ in FIXTURES)["dead_writes"]
    an = analyze_structure(prog)
    rel = init_fault_indices(an)
    # r1 = add r0, 1 is overwritten before any read
    for i in range(prog.width):
        assert rel.find(rel.index[FaultSite(0, 1, i, WRITE)]) == 0
        assert rel.find(rel.index[FaultSite(0, 0, i, READ)]) != 0


def _extra_iteration_changes(prog, res) -> int:
    rel = res.relation.copy()
    return coalesce_iteration(res.analysis, rel, FlipEffects(prog, res.bitvalues))


def _history_non_increasing(res) -> bool:
    h = res.class_history
    return all(a >= b for a, b in zip(h, h[1:]))


@pytest.mark.parametrize("name,prog,inputs", FIXTURES, ids=[f[0] for f in FIXTURES])
def test_fixture_relation_sound(name, prog, inputs):
    res = run_coalescing(prog)
    assert _history_non_increasing(res)
    assert _extra_iteration_changes(prog, res) == 0
    for vec in inputs:
        report = validate_equivalence(res, exhaustive_campaign(prog, vec))
        assert report.unsound == 0 and report.masked_mismatches == 0, report


@pytest.mark.parametrize("name,prog,inputs", FIXTURES, ids=[f[0] for f in FIXTURES])
def test_masked_sites_replay_golden(name, prog, inputs):
    """Brute-force flip-and-run on every site the relation calls masked."""
    res = run_coalescing(prog)
    for vec in inputs:
        sim = Simulator(prog, vec)
        golden = execute(prog, vec)
        sites = enumerate_dynamic_fault_space(golden, prog)
        for s, key in zip(sites, dynamic_class_keys(res, sites)):
            if key == "masked":
                assert execute(prog, vec, s.spec, sim.limit).same_run(golden), s


def test_validation_catches_wrong_relation(motivating):
    res = run_coalescing(motivating)
    campaign = exhaustive_campaign(motivating, {})
    lumped = ["all"] * len(campaign.sites)
    report = validate_equivalence(res, campaign, keys=lumped)
    assert report.unsound > 0 and not report.ok


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(0, 1000))
def test_visit_order_invariance(seed, order_seed):
    prog = parse_program(gen_corpus(seed, 1)[0].source)
    a = run_coalescing(prog)
    b = run_coalescing(prog, visit_seed=order_seed)
    assert a.relation.partition() == b.relation.partition()
    assert _history_non_increasing(b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_generated_relation_sound(seed):
    cp = gen_corpus(seed, 1)[0]
    prog = parse_program(cp.source)
    res = run_coalescing(prog)
    assert _extra_iteration_changes(prog, res) == 0
    vec = cp.inputs[0]
    assert validate_equivalence(res, exhaustive_campaign(prog, vec)).ok
