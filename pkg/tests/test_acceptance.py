"""Acceptance checks.  Each test prints one PASS/FAIL line with its measured
numbers; run ``pytest tests/test_acceptance.py -v`` to see them."""

import itertools
import random

import pytest

from becir.bitvalue import AbstractBit, analyze_bit_values, is_fixed_point, meet
from becir.coalesce import FlipEffects, coalesce_iteration, run_coalescing
from becir.corpus import gen_corpus
from becir.faultsim import Simulator, enumerate_dynamic_fault_space, execute, exhaustive_campaign, validate_equivalence
from becir.ir import parse_program
from becir.pruning import bec_prune_plan, expand_results, inject_on_read_plan
from becir.scheduler import reschedule_program, vulnerability

from conftest import FIXTURES, builtin
from test_bitvalue import containment_violations, monotonicity_violations

CORPUS_SEED = 0
CORPUS_SIZE = 200

# Motivating-example figures.
PLAN_FULL = 288
PLAN_BEC = 225
PRUNED_FRACTION = 0.218
PRUNED_FRACTION_TOL = 0.001
VULN_ORIGINAL = 681
VULN_BEST = 576
REDUCTION = 0.154
REDUCTION_TOL = 0.0005


@pytest.fixture(scope="module")
def corpus():
    """(name, program, inputs, relation) for the generated corpus and the fixtures."""
    out = []
    for cp in gen_corpus(CORPUS_SEED, CORPUS_SIZE):
        prog = parse_program(cp.source)
        out.append((cp.name, prog, list(cp.inputs), run_coalescing(prog)))
    return out


@pytest.fixture(scope="module")
def campaigns(corpus):
    """Full campaign, BEC plan and pruned campaign per (program, input)."""
    runs = []
    for name, prog, inputs, res in corpus:
        for vec in inputs:
            sim = Simulator(prog, vec)
            full = exhaustive_campaign(prog, vec, simulator=sim)
            plan, stats = bec_prune_plan(sim.golden, res, prog)
            pruned = exhaustive_campaign(prog, vec, plan=plan, simulator=sim)
            runs.append((name, prog, vec, res, full, plan, pruned))
    return runs


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def test_criterion_1_soundness(capsys, campaigns):
    unsound = mismatches = checked = 0
    pairs = 0
    extra = [(n, p, ins, run_coalescing(p)) for n, p, ins in FIXTURES]
    extra.append(("motivating", builtin("motivating"), [{}], run_coalescing(builtin("motivating"))))
    rows = [(name, res, full) for name, _, _, res, full, _, _ in campaigns]
    for name, prog, inputs, res in extra:
        for vec in inputs:
            rows.append((name, res, exhaustive_campaign(prog, vec)))
    for name, res, full in rows:
        rep = validate_equivalence(res, full)
        unsound += rep.unsound
        mismatches += rep.masked_mismatches
        pairs += rep.sound_precise + rep.sound_imprecise + rep.unsound
        checked += 1
    programs = CORPUS_SIZE + len(extra)
    report(capsys, 1, unsound == 0 and mismatches == 0 and programs >= 210,
           f"{checked} campaigns over {programs} programs, {pairs} same-trace/same-class pairs; "
           f"unsound pairs = {unsound}, masked mismatches = {mismatches}")


def test_criterion_2_lossless_pruning(capsys, campaigns):
    bad = []
    planned = total = 0
    for name, prog, vec, res, full, plan, pruned in campaigns:
        planned += len(plan)
        total += len(full.sites)
        if not expand_results(pruned, plan).same_classes(full):
            bad.append(name)
    report(capsys, 2, not bad,
           f"{len(campaigns)} campaigns, expanded == exhaustive in all but {len(bad)}; "
           f"runs {planned}/{total} ({1 - planned / total:.1%} pruned)")


def test_criterion_3_motivating_pruning(capsys):
    prog = builtin("motivating")
    golden = execute(prog, {})
    full = inject_on_read_plan(golden, prog)
    plan, stats = bec_prune_plan(golden, run_coalescing(prog), prog)
    frac = stats.pruned_fraction
    ok = (len(full) == PLAN_FULL and len(plan) == PLAN_BEC
          and abs(frac - PRUNED_FRACTION) <= PRUNED_FRACTION_TOL)
    report(capsys, 3, ok, f"inject-on-read = {len(full)} (want {PLAN_FULL}), BEC = {len(plan)} "
                          f"(want {PLAN_BEC}), pruned = {frac:.5f} (want {PRUNED_FRACTION}±{PRUNED_FRACTION_TOL})")


def test_criterion_4_motivating_scheduling(capsys):
    prog = builtin("motivating")
    res = run_coalescing(prog)
    golden = execute(prog, {})
    original = vulnerability(prog, golden, res).live_fault_sites
    best = reschedule_program(prog, res, "best")
    best_golden = execute(best, {})
    best_v = vulnerability(best, best_golden).live_fault_sites
    reduction = 1 - best_v / original
    same_size = (len(best.instructions) == len(prog.instructions)
                 and len(enumerate_dynamic_fault_space(best_golden, best)) == PLAN_FULL)
    ok = original == VULN_ORIGINAL and best_v == VULN_BEST and abs(reduction - REDUCTION) <= REDUCTION_TOL and same_size
    report(capsys, 4, ok, f"vulnerability original = {original} (want {VULN_ORIGINAL}), best = {best_v} "
                          f"(want {VULN_BEST}), reduction = {reduction:.4f} (want {REDUCTION}), "
                          f"sizes unchanged = {same_size}")


def test_criterion_5_lattice_and_transfer_laws(capsys):
    bits = list(AbstractBit)
    meet_bad = sum(1 for a, b, c in itertools.product(bits, repeat=3)
                   if meet(a, b) != meet(b, a) or meet(meet(a, b), c) != meet(a, meet(b, c)) or meet(a, a) != a)
    mono = monotonicity_violations()
    cont = containment_violations()
    report(capsys, 5, meet_bad == mono == cont == 0,
           f"meet law violations = {meet_bad} (64 triples), non-monotone transfers = {mono}, "
           f"containment violations = {cont} (exhaustive, w=4)")


def test_criterion_6_fixed_point(capsys, corpus):
    not_fixed = extra_merges = increasing = order_dependent = 0
    rng = random.Random(6)
    for name, prog, _, res in corpus:
        if not is_fixed_point(res.bitvalues, res.analysis.cfg):
            not_fixed += 1
        rel = res.relation.copy()
        if coalesce_iteration(res.analysis, rel, FlipEffects(prog, res.bitvalues)) != 0:
            extra_merges += 1
        h = res.class_history
        if any(b > a for a, b in zip(h, h[1:])):
            increasing += 1
        seed = rng.randrange(1 << 30)
        bv = analyze_bit_values(prog, res.analysis.cfg, visit_seed=seed)
        shuffled = run_coalescing(prog, visit_seed=seed)
        if (bv.before, bv.after) != (res.bitvalues.before, res.bitvalues.after) or \
                shuffled.relation.partition() != res.relation.partition():
            order_dependent += 1
    total = not_fixed + extra_merges + increasing + order_dependent
    report(capsys, 6, total == 0,
           f"{len(corpus)} programs: not fixed = {not_fixed}, extra-iteration merges = {extra_merges}, "
           f"class count increases = {increasing}, visit-order dependent = {order_dependent}")


def test_criterion_7_scheduler_contracts(capsys, corpus):
    changed_semantics, inverted, plan_changed = [], [], []
    for name, prog, inputs, res in corpus:
        best = reschedule_program(prog, res, "best")
        worst = reschedule_program(prog, res, "worst")
        for vec in inputs:
            golden = execute(prog, vec)
            size = len(enumerate_dynamic_fault_space(golden, prog))
            for variant in (best, worst):
                t = execute(variant, vec)
                if (t.status, t.value) != (golden.status, golden.value):
                    changed_semantics.append(name)
                if len(enumerate_dynamic_fault_space(t, variant)) != size:
                    plan_changed.append(name)
        vec = inputs[0]
        vb = vulnerability(best, execute(best, vec)).live_fault_sites
        vw = vulnerability(worst, execute(worst, vec)).live_fault_sites
        if vb > vw:
            inverted.append(f"{name} ({vb} > {vw})")
    n = len(corpus)
    ok = not changed_semantics and not inverted and not plan_changed
    report(capsys, 7, ok, f"{n} programs: semantics changed = {len(changed_semantics)}, "
                          f"best <= worst in {n - len(inverted)}/{n}"
                          + (f" (inverted: {', '.join(inverted)})" if inverted else "")
                          + f", plan size changed = {len(plan_changed)}")


def test_criterion_8_not_reproducible(capsys):
    with capsys.disabled():
        print("\nSKIP criterion 8: benchmark tables need the full compiler and ISA simulator "
              "toolchain; covered by criteria 1-7 instead")
    pytest.skip("documented as out of scope")
