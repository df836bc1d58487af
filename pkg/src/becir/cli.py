"""Command-line frontend: ``becir <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 analysis or configuration error,
3 the coalescing relation was found unsound by ``validate``.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .bitvalue import analyze_bit_values
from .coalesce import run_coalescing
from .corpus import gen_corpus, write_corpus
from .faultsim import (CampaignResult, FaultSpec, Simulator, execute, exhaustive_campaign,
                       validate_equivalence)
from .ir import BecirError, parse_program, program_to_text
from .pruning import CampaignPlan, bec_prune_plan, expand_results, inject_on_read_plan
from .scheduler import POLICIES, reschedule_program, vulnerability

EXIT_OK, EXIT_USAGE, EXIT_ANALYSIS, EXIT_UNSOUND = 0, 1, 2, 3

BUILTIN_PREFIX = "builtin:"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers

def builtin_source(name: str) -> str:
    path = resources.files("becir") / "data" / f"{name}.bir"
    if not path.is_file():
        raise UsageError(f"no built-in program {name!r}")
    return path.read_text()


def load_program(args):
    spec = args.program
    if spec.startswith(BUILTIN_PREFIX):
        text = builtin_source(spec[len(BUILTIN_PREFIX):])
    else:
        try:
            text = Path(spec).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {spec}: {exc.strerror}") from None
    return parse_program(text, width=args.width, regs=args.regs)


def parse_inputs(items) -> dict:
    out = {}
    for item in items or ():
        for part in item.split(","):
            part = part.strip()
            if not part:
                continue
            reg, sep, value = part.partition("=")
            if not sep or not reg.startswith("r") or not reg[1:].isdigit():
                raise UsageError(f"bad input {part!r}; expected rK=VALUE")
            try:
                out[int(reg[1:])] = int(value, 0) if value.lower().startswith(("0x", "0b")) else int(value)
            except ValueError:
                raise UsageError(f"bad input value in {part!r}") from None
    return out


def emit(args, name: str, data) -> None:
    """Write JSON to ``--out DIR/name`` or stdout."""
    text = json.dumps(data, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    else:
        sys.stdout.write(text)


def read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands

def cmd_analyze(args) -> int:
    prog = load_program(args)
    emit(args, "bitvalues.json", analyze_bit_values(prog).to_json())
    return EXIT_OK


def cmd_coalesce(args) -> int:
    prog = load_program(args)
    emit(args, "classes.json", run_coalescing(prog).to_json())
    return EXIT_OK


def cmd_prune(args) -> int:
    prog = load_program(args)
    sim = Simulator(prog, parse_inputs(args.input))
    if args.baseline:
        plan = inject_on_read_plan(sim.golden, prog)
        stats = {"live_in_values": len(plan.sites), "planned_runs": len(plan)}
    else:
        plan, pstats = bec_prune_plan(sim.golden, run_coalescing(prog), prog)
        stats = pstats.to_json()
        stats["planned_runs"] = len(plan)
    if args.emit:
        plan_path, stats_path = args.emit
        Path(plan_path).write_text(json.dumps(plan.to_json()) + "\n")
        Path(stats_path).write_text(json.dumps(stats, indent=2) + "\n")
    else:
        emit(args, "prune.json", stats)
    return EXIT_OK


def cmd_schedule(args) -> int:
    prog = load_program(args)
    inputs = parse_inputs(args.input)
    result = run_coalescing(prog)
    variants = {pol: reschedule_program(prog, result, pol) for pol in POLICIES}
    scores = {}
    cycles = total = None
    for pol, variant in variants.items():
        golden = execute(variant, inputs)
        rep = vulnerability(variant, golden)
        scores[pol] = rep.live_fault_sites
        cycles, total = rep.cycles, rep.total_fault_space
    chosen = variants[args.policy]
    text = program_to_text(chosen)
    report = {
        "function": prog.name,
        "policy": args.policy,
        "cycles": cycles,
        "total_fault_space": total,
        "original": scores["original"],
        "best_reliability": scores["best"],
        "worst_reliability": scores["worst"],
        "selected": scores[args.policy],
        "reduction": round(1 - scores["best"] / scores["original"], 6) if scores["original"] else 0.0,
        "worst_over_best": round(scores["worst"] / scores["best"], 6) if scores["best"] else None,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{prog.name}.{args.policy}.bir").write_text(text)
        (out / "vulnerability.json").write_text(json.dumps(report, indent=2) + "\n")
    else:
        sys.stdout.write(text)
        sys.stdout.write(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    prog = load_program(args)
    inputs = parse_inputs(args.input)
    try:
        faults = [FaultSpec.parse(f) for f in args.flip or ()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    first, extra = (faults[0], faults[1:]) if faults else (None, [])
    trace = execute(prog, inputs, first, args.cycle_limit, extra)
    lines = [json.dumps(ev.to_json()) for ev in trace.events]
    lines.append(json.dumps(trace.status_json()))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.jsonl").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_campaign(args) -> int:
    prog = load_program(args)
    inputs = parse_inputs(args.input)
    sim = Simulator(prog, inputs, args.cycle_limit)
    plan = None
    if args.plan != "full":
        plan = CampaignPlan.from_json(read_json(args.plan))
    res = exhaustive_campaign(prog, inputs, plan=plan, jobs=args.jobs, simulator=sim)
    emit(args, "campaign.json", res.to_json())
    print(f"{res.runs} runs in {res.wall_time:.2f}s", file=sys.stderr)
    return EXIT_OK


def cmd_expand(args) -> int:
    pruned = CampaignResult.from_json(read_json(args.campaign))
    plan = CampaignPlan.from_json(read_json(args.plan))
    emit(args, "expanded.json", expand_results(pruned, plan).to_json())
    return EXIT_OK


def cmd_validate(args) -> int:
    prog = load_program(args)
    inputs = parse_inputs(args.input)
    sim = Simulator(prog, inputs, args.cycle_limit)
    result = run_coalescing(prog)
    campaign = exhaustive_campaign(prog, inputs, jobs=args.jobs, simulator=sim)
    report = validate_equivalence(result, campaign)
    data = {"function": prog.name, "runs": campaign.runs,
            "distinct_traces": campaign.distinct_traces, **report.to_json()}
    emit(args, "validation.json", data)
    return EXIT_OK if report.ok else EXIT_UNSOUND


def cmd_gen_corpus(args) -> int:
    if args.out is None:
        raise UsageError("gen-corpus needs --out DIR")
    seed = 0 if args.seed is None else args.seed
    write_corpus(gen_corpus(seed, args.count), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _global_flags(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--width", type=int, default=default, help="bit width; must match the program header")
    parser.add_argument("--regs", type=int, default=default, help="register count; must match the program header")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for campaigns")
    parser.add_argument("--seed", type=int, default=default, help="corpus generator seed")
    parser.add_argument("--out", default=default, metavar="DIR", help="write outputs into DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="becir", description="Bit-level fault-site coalescing for a small register IR.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text, program=True, inputs=False, limit=False):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        if program:
            p.add_argument("program", help="BECIR file or builtin:NAME")
        if inputs:
            p.add_argument("--input", action="append", metavar="rK=V", help="input register value (repeatable)")
        if limit:
            p.add_argument("--cycle-limit", type=int, default=None, help="cycle limit for faulty runs")
        p.set_defaults(func=func)
        return p

    command("analyze", cmd_analyze, "print abstract bit values per point")
    command("coalesce", cmd_coalesce, "print fault-index classes")
    p = command("prune", cmd_prune, "build a campaign plan", inputs=True)
    p.add_argument("--baseline", action="store_true", help="plain inject-on-read plan")
    p.add_argument("--emit", nargs=2, metavar=("PLAN", "STATS"), help="write plan and stats JSON files")
    p = command("schedule", cmd_schedule, "reschedule blocks and report vulnerability", inputs=True)
    p.add_argument("--policy", choices=POLICIES, default="best")
    p = command("simulate", cmd_simulate, "run once, printing the trace as JSON lines", inputs=True, limit=True)
    p.add_argument("--flip", action="append", metavar="CYCLE:rK:BIT", help="bit flip before a cycle")
    p = command("campaign", cmd_campaign, "run one faulty execution per planned site", inputs=True, limit=True)
    p.add_argument("--plan", default="full", metavar="FILE|full")
    p = command("expand", cmd_expand, "rebuild full-space results from a pruned campaign", program=False)
    p.add_argument("campaign", help="campaign JSON of the pruned plan")
    p.add_argument("plan", help="plan JSON written by prune --emit")
    command("validate", cmd_validate, "check the relation against an exhaustive campaign", inputs=True, limit=True)
    p = command("gen-corpus", cmd_gen_corpus, "write a seeded corpus of programs", program=False)
    p.add_argument("--count", type=int, default=200)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"becir: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BecirError as exc:
        print(f"becir: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
