"""Campaign planning: the inject-on-read baseline, the pruned plan derived
from the coalescing relation, and reconstruction of full results."""

from __future__ import annotations

from dataclasses import dataclass

from .coalesce import CoalesceError, CoalesceResult
from .faultsim import CampaignResult, DynamicFaultSite, Trace, dynamic_class_keys, enumerate_dynamic_fault_space
from .ir import BecirError, Program


class IncompleteCampaign(BecirError):
    pass


@dataclass(frozen=True)
class CampaignPlan:
    """``sites`` is the full inject-on-read space; ``representative[k]`` is
    the planned site whose outcome site k inherits, or None when masked."""

    sites: tuple
    representative: tuple
    injections: tuple

    def __len__(self) -> int:
        return len(self.injections)

    def to_json(self) -> dict:
        index = {s: k for k, s in enumerate(self.sites)}
        return {
            "sites": [[s.cycle, s.reg, s.bit, s.point] for s in self.sites],
            "representative": [None if r is None else index[r] for r in self.representative],
            "injections": [index[s] for s in self.injections],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CampaignPlan":
        sites = tuple(DynamicFaultSite(*row) for row in data["sites"])
        reps = tuple(None if r is None else sites[r] for r in data["representative"])
        return cls(sites, reps, tuple(sites[k] for k in data["injections"]))


@dataclass(frozen=True)
class PruneStats:
    live_in_values: int
    live_in_bits: int
    masked_bits: int
    inferrable_bits: int
    static_live_in_values: int = 0
    static_live_in_bits: int = 0
    static_masked_bits: int = 0
    static_inferrable_bits: int = 0

    @property
    def pruned_fraction(self) -> float:
        if self.live_in_values == 0:
            return 0.0
        return 1 - self.live_in_bits / self.live_in_values

    def to_json(self) -> dict:
        return {
            "live_in_values": self.live_in_values,
            "live_in_bits": self.live_in_bits,
            "masked_bits": self.masked_bits,
            "inferrable_bits": self.inferrable_bits,
            "pruned_fraction": round(self.pruned_fraction, 6),
            "static_live_in_values": self.static_live_in_values,
            "static_live_in_bits": self.static_live_in_bits,
            "static_masked_bits": self.static_masked_bits,
            "static_inferrable_bits": self.static_inferrable_bits,
        }


def inject_on_read_plan(golden: Trace, prog: Program) -> CampaignPlan:
    sites = enumerate_dynamic_fault_space(golden, prog)
    return CampaignPlan(sites, sites, sites)


def _static_stats(result: CoalesceResult) -> tuple:
    prog = result.program
    roots = []
    for p, ins in enumerate(prog.instructions):
        for v in ins.reads:
            for i in range(prog.width):
                roots.append(result.read_root(p, v, i))
    masked = sum(1 for r in roots if r == 0)
    live = len({r for r in roots if r != 0})
    return len(roots), live, masked, len(roots) - masked - live


def bec_prune_plan(golden: Trace, result: CoalesceResult, prog: Program) -> tuple:
    """Drop masked sites and keep the lowest (cycle, reg, bit) site of every
    other dynamic class.  Returns (plan, stats)."""
    if not prog.structurally_equal(result.program):
        raise CoalesceError("relation was computed for a different program")
    sites = enumerate_dynamic_fault_space(golden, prog)
    keys = dynamic_class_keys(result, sites)
    first = {}
    reps = []
    injections = []
    for s, k in zip(sites, keys):
        if k == "masked":
            reps.append(None)
            continue
        if k not in first:
            first[k] = s
            injections.append(s)
        reps.append(first[k])
    masked = sum(1 for r in reps if r is None)
    inferrable = len(sites) - masked - len(injections)
    stats = PruneStats(len(sites), len(injections), masked, inferrable, *_static_stats(result))
    return CampaignPlan(sites, tuple(reps), tuple(injections)), stats


def expand_results(pruned: CampaignResult, plan: CampaignPlan) -> CampaignResult:
    """Full-space results: masked sites get class 0, the rest copy their
    representative's class.  Class ids are renumbered by first occurrence."""
    outcome = dict(zip(pruned.sites, pruned.classes))
    classes = []
    for s, rep in zip(plan.sites, plan.representative):
        if rep is None:
            classes.append(0)
        elif rep in outcome:
            classes.append(outcome[rep])
        else:
            raise IncompleteCampaign(f"no result for representative {rep.ident()}")
    return CampaignResult(plan.sites, tuple(classes), pruned.runs, pruned.wall_time).canonical()
