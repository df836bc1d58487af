import pytest

from becir.coalesce import CoalesceError, run_coalescing
from becir.faultsim import CampaignResult, execute, exhaustive_campaign
from becir.pruning import (CampaignPlan, IncompleteCampaign, PruneStats, bec_prune_plan, expand_results,
                           inject_on_read_plan)

from conftest import FIXTURES, builtin


def test_motivating_plan(motivating):
    golden = execute(motivating, {})
    plan, stats = bec_prune_plan(golden, run_coalescing(motivating), motivating)
    assert len(inject_on_read_plan(golden, motivating)) == 288
    assert len(plan) == 225
    assert (stats.live_in_values, stats.live_in_bits, stats.masked_bits, stats.inferrable_bits) == (288, 225, 42, 21)
    assert stats.pruned_fraction == pytest.approx(63 / 288)
    assert (stats.static_live_in_values, stats.static_live_in_bits) == (48, 39)


def test_representatives_are_planned(motivating):
    golden = execute(motivating, {})
    plan, _ = bec_prune_plan(golden, run_coalescing(motivating), motivating)
    planned = set(plan.injections)
    for s, rep in zip(plan.sites, plan.representative):
        assert rep is None or rep in planned
        if rep is not None:
            assert rep <= s  # lowest site of its class


def test_plan_json_round_trip(motivating):
    golden = execute(motivating, {})
    plan, _ = bec_prune_plan(golden, run_coalescing(motivating), motivating)
    assert CampaignPlan.from_json(plan.to_json()) == plan


@pytest.mark.parametrize("name,prog,inputs", FIXTURES + [("motivating", builtin("motivating"), [{}])],
                         ids=[f[0] for f in FIXTURES] + ["motivating"])
def test_expand_is_lossless(name, prog, inputs):
    res = run_coalescing(prog)
    for vec in inputs:
        golden = execute(prog, vec)
        plan, stats = bec_prune_plan(golden, res, prog)
        full = exhaustive_campaign(prog, vec)
        pruned = exhaustive_campaign(prog, vec, plan=plan)
        assert pruned.runs == len(plan) <= len(full.sites)
        assert expand_results(pruned, plan).same_classes(full)
        assert stats.masked_bits + stats.inferrable_bits + stats.live_in_bits == stats.live_in_values


def test_missing_representative_is_reported(motivating):
    golden = execute(motivating, {})
    plan, _ = bec_prune_plan(golden, run_coalescing(motivating), motivating)
    pruned = exhaustive_campaign(motivating, {}, plan=plan)
    short = CampaignResult(pruned.sites[1:], pruned.classes[1:], pruned.runs - 1)
    with pytest.raises(IncompleteCampaign):
        expand_results(short, plan)


def test_relation_for_other_program_is_rejected(motivating):
    other = builtin("motivating_rescheduled")
    with pytest.raises(CoalesceError):
        bec_prune_plan(execute(motivating, {}), run_coalescing(other), motivating)


def test_empty_stats_fraction():
    assert PruneStats(0, 0, 0, 0).pruned_fraction == 0.0


def test_bundled_expected_stats():
    from importlib import resources
    import json
    from becir.scheduler import vulnerability
    expected = json.loads((resources.files("becir") / "data" / "motivating_expected.json").read_text())
    for name, want in expected.items():
        prog = builtin(name)
        golden = execute(prog, {})
        res = run_coalescing(prog)
        assert golden.value == want["result"] and len(golden) == want["cycles"]
        assert len(inject_on_read_plan(golden, prog)) == want["inject_on_read_runs"]
        assert vulnerability(prog, golden, res).live_fault_sites == want["vulnerability"]
        if "bec_runs" in want:
            plan, stats = bec_prune_plan(golden, res, prog)
            assert len(plan) == want["bec_runs"]
            assert (stats.masked_bits, stats.inferrable_bits) == (want["masked_bits"], want["inferrable_bits"])
            assert exhaustive_campaign(prog, {}).distinct_traces == want["distinct_traces"]
