"""Command line front end.

Subcommands run scenario-defined checks and engines, or the seeded
random suites, and emit one report: human-readable text by default, or
stable machine-readable JSON with --format structured.  Exit status 0
means every certified clause passed; nonzero codes classify the failure:
2 precondition, 3 depth or budget, 4 missing oracle, 5 parse trouble.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .blocks import block_seq_check, le_at
from .calibration import CalibrationInput, calibrate, verify_calibration
from .constructions import FusionInput, TowerInput, diagonal, fuse, lift_system
from .errors import (
    DepthExceeded,
    LabError,
    OracleRequired,
    PreconditionFailed,
    ScenarioError,
)
from .forcing import (
    check_condition,
    extend_condition,
    leq_condition,
    meet_chain,
    run_stage,
)
from .forcing import _derive_certs
from .maps import normal_check
from .report import Report
from .rho import RhoTriple, delta_rho
from .scenario import Scenario, parse_scenario, print_scenario
from .streams import Budget, rapid_witness_check, set_default_budget
from . import suites

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PRECONDITION = 2
EXIT_DEPTH = 3
EXIT_ORACLE = 4
EXIT_PARSE = 5


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = dispatch(args)
    except ScenarioError as err:
        print(f"scenario error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except OracleRequired as err:
        print(f"oracle required: {err.obligation}", file=sys.stderr)
        return EXIT_ORACLE
    except DepthExceeded as err:
        print(f"depth/budget exceeded: {err}", file=sys.stderr)
        return EXIT_DEPTH
    except PreconditionFailed as err:
        print(f"precondition failed: {err}", file=sys.stderr)
        return EXIT_PRECONDITION
    except LabError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PRECONDITION
    emit(report, args)
    return EXIT_OK if report.ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blocklab",
        description="run scenario checks, construction engines, and random suites")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("check", "re-verify every condition and structural check in a scenario"),
        ("lemma7", "run the interval calibrations of a scenario and verify them"),
        ("fuse", "run the fusion engines of a scenario"),
        ("lift", "run the lifting engines of a scenario"),
        ("diagonal", "run the diagonal constructions of a scenario"),
        ("extend", "run the named stages' single extension tasks"),
        ("meet", "meet the named chains of a scenario"),
        ("stage", "fold the task stages of a scenario"),
        ("suite", "run a seeded random suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        if name == "suite":
            p.add_argument("scenario", nargs="?", help="scenario with a suite entry")
            p.add_argument("--kind", help="suite kind when no scenario is given")
            p.add_argument("--instances", type=int, default=None)
        else:
            p.add_argument("scenario", help="path of the scenario document")
        p.add_argument("--depth", type=int, default=None, help="verification depth")
        p.add_argument("--budget", type=int, default=None, help="steps per query")
        p.add_argument("--seed", type=int, default=0, help="suite seed")
        p.add_argument("--strict", action="store_true",
                       help="missing oracles abort instead of being recorded")
        p.add_argument("--format", choices=("text", "structured"), default="text")
        p.add_argument("--out", help="write the report to this file as well")
    return parser


def load(args) -> Scenario:
    text = Path(args.scenario).read_text()
    sc = parse_scenario(text)
    if args.budget is not None:
        sc.defaults["budget"] = args.budget
    set_default_budget(sc.budget)
    return sc


def emit(report: Report, args) -> None:
    rendered = report.to_json() if args.format == "structured" else report.to_text()
    sys.stdout.write(rendered)
    if getattr(args, "out", None):
        Path(args.out).write_text(report.to_json())


def dispatch(args) -> Report:
    cmd = args.command
    if cmd == "suite":
        return run_suite(args)
    sc = load(args)
    depth = args.depth if args.depth is not None else sc.depth
    handlers = {
        "check": cmd_check,
        "lemma7": cmd_lemma7,
        "fuse": cmd_fuse,
        "lift": cmd_lift,
        "diagonal": cmd_diagonal,
        "extend": cmd_extend,
        "meet": cmd_meet,
        "stage": cmd_stage,
    }
    return handlers[cmd](sc, depth, args)


def _condition_in_context(sc: Scenario, name: str):
    cond, ctx_name = sc.get(name, "conditions")
    ctx = sc.get(ctx_name, "contexts")
    bud = Budget(sc.budget * 8, f"certs of {name}")
    if not cond.image_certs:
        _derive_certs(ctx, cond, sc.depth, bud, False, [])
    return cond, ctx


def cmd_check(sc: Scenario, depth: int, args) -> Report:
    report = Report("check")
    for name in sc.of_kind("conditions"):
        cond, ctx = _condition_in_context(sc, name)
        sub = check_condition(cond, ctx, depth)
        for line in sub.lines:
            report.add(line.tag, f"{name}: {line.subject}", line.ok, line.witness)
    for i, chk in enumerate(sc.checks):
        _structural_check(sc, report, i, dict(chk), depth)
    return report


def _structural_check(sc: Scenario, report: Report, i: int, chk: dict, depth: int) -> None:
    op = chk.pop("op")
    d = int(chk.pop("depth", depth))
    if op == "blocks":
        seq = sc.get(chk.pop("seq"), "blockseqs")
        v = block_seq_check(seq, d)
        report.add("d13:member", f"checks[{i}] {seq.name}", v.ok,
                   "" if v.ok else f"{v.clause} at {v.fail_index}")
    elif op == "le":
        lower = sc.get(chk.pop("lower"), "blockseqs")
        upper = sc.get(chk.pop("upper"), "blockseqs")
        level = int(chk.pop("level", 0))
        v = le_at(lower, upper, level, d)
        report.add("d13:le", f"checks[{i}] {lower.name}<={upper.name}@{level}", v.ok,
                   "" if v.ok else v.reason)
    elif op == "normal":
        tri = sc.get(chk.pop("triple"), "triples")
        v = normal_check(tri, d)
        report.add("d21:normal", f"checks[{i}]", v.ok,
                   "" if v.ok else f"{v.clause} at {v.at}")
    elif op == "rapid":
        x = sc.get(chk.pop("x"), "streams")
        z = sc.get(chk.pop("z"), "streams")
        f = sc.get(chk.pop("schedule"), "schedules")
        v = rapid_witness_check(x, z, f, d)
        report.add("t33:rapid", f"checks[{i}]", v.ok,
                   "" if v.ok else f"fails at {v.fail_at}")
    elif op == "delta":
        rows = [sc.get(nm, "streams") for nm in chk.pop("rows")]
        k_table = {}
        for key, val in chk.pop("cuts").items():
            m, n = key.split(",")
            k_table[(int(m), int(n))] = int(val)
        proj = {}
        for key, nm in chk.pop("proj", {}).items():
            m, n = key.split(",")
            proj[(int(m), int(n))] = sc.get(nm, "maps")
        column = int(chk.pop("column"))
        res = delta_rho(RhoTriple(rows=tuple(rows), k_table=k_table, proj=proj), column)
        want = chk.pop("expect", None)
        ok = want is None or list(res.merged) == [int(x) for x in want]
        report.add("r1:delta", f"checks[{i}] column {column}", ok,
                   f"fresh {list(res.merged)} count {res.running_after}")
    else:
        raise PreconditionFailed("check-op", f"checks[{i}]: unknown op {op!r}")
    if chk:
        raise PreconditionFailed("check-op", f"checks[{i}]: unknown field(s) {sorted(chk)}")


def _calibration_input(sc: Scenario, body: dict, depth: int) -> tuple[CalibrationInput, dict]:
    body = dict(body)
    levels = int(body.pop("levels"))
    proj = {}
    for key, nm in body.pop("proj", {}).items():
        n, m = key.split(">")
        proj[(int(n), int(m))] = sc.get(nm, "maps")
    e_rows = [sc.get(nm, "streams") for nm in body.pop("e_rows")]
    c_rows = [sc.get(nm, "streams") for nm in body.pop("c_rows")]
    d_rows = [sc.get(nm, "streams") for nm in body.pop("d_rows")]
    sched = sc.get(body.pop("schedule"), "schedules")
    cert = int(body.pop("cert_depth", depth))
    rapid = body.pop("rapid_depth", None)
    inp = CalibrationInput(levels=levels, proj=proj, e_rows=e_rows, c_rows=c_rows,
                           d_rows=d_rows, f=sched, cert_depth=cert,
                           rapid_depth=None if rapid is None else int(rapid),
                           budget=sc.budget)
    return inp, body


def cmd_lemma7(sc: Scenario, depth: int, args) -> Report:
    report = Report("lemma7")
    for name, body in sc.calibrations.items():
        inp, rest = _calibration_input(sc, body, depth)
        if rest:
            raise PreconditionFailed("calibration", f"{name}: unknown field(s) {sorted(rest)}")
        cal = calibrate(inp)
        for (m, n), v in sorted(cal.k_table.items()):
            report.add("t7:K", f"{name} m={m} n={n}", True, str(v))
        for n, g in enumerate(cal.gprime):
            report.add("t7:g'", f"{name} n={n}", True, str(g))
        sub = verify_calibration(inp, cal)
        for line in sub.lines:
            report.add(line.tag, f"{name}: {line.subject}", line.ok, line.witness)
    return report


def cmd_fuse(sc: Scenario, depth: int, args) -> Report:
    report = Report("fuse")
    for name, body in sc.fusions.items():
        body = dict(body)
        chain = [sc.get(nm, "blockseqs") for nm in body.pop("chain")]
        triple = sc.get(body.pop("triple"), "triples")
        pseudo = sc.get(body.pop("pseudo"), "streams")
        check_depth = int(body.pop("check_depth", min(12, depth)))
        if body:
            raise PreconditionFailed("fusion", f"{name}: unknown field(s) {sorted(body)}")
        res = fuse(FusionInput(chain=chain, triple=triple, pseudo=pseudo,
                               check_depth=check_depth, budget=sc.budget), depth)
        for line in res.report.lines:
            report.add(line.tag, f"{name}: {line.subject}", line.ok, line.witness)
    return report


def cmd_lift(sc: Scenario, depth: int, args) -> Report:
    report = Report("lift")
    for name, body in sc.lifts.items():
        body = dict(body)
        levels = int(body.pop("levels"))
        proj = {}
        for key, nm in body.pop("proj", {}).items():
            n, m = key.split(">")
            proj[(int(n), int(m))] = sc.get(nm, "maps")
        carrier = sc.get(body.pop("carrier"), "blockseqs")
        cert = int(body.pop("cert_depth", 48))
        if body:
            raise PreconditionFailed("lift", f"{name}: unknown field(s) {sorted(body)}")
        res = lift_system(proj, levels, carrier, depth, cert_depth=cert, budget=sc.budget)
        for line in res.report.lines:
            report.add(line.tag, f"{name}: {line.subject}", line.ok, line.witness)
    return report


def cmd_diagonal(sc: Scenario, depth: int, args) -> Report:
    report = Report("diagonal")
    for name, body in sc.towers.items():
        body = dict(body)
        levels = int(body.pop("levels"))
        proj = {}
        for key, nm in body.pop("proj", {}).items():
            n, m = key.split(">")
            proj[(int(n), int(m))] = sc.get(nm, "maps")
        carrier = sc.get(body.pop("carrier"), "blockseqs")
        chain = [sc.get(nm, "blockseqs") for nm in body.pop("chain")]
        top_triples = [sc.get(nm, "triples") for nm in body.pop("top_triples")]
        side_triples = [sc.get(nm, "triples") for nm in body.pop("side_triples")]
        side_level = [int(x) for x in body.pop("side_level")]
        sched = sc.get(body.pop("schedule"), "schedules")
        cert = int(body.pop("cert_depth", 14))
        if body:
            raise PreconditionFailed("tower", f"{name}: unknown field(s) {sorted(body)}")
        tw = TowerInput(levels=levels, carrier=carrier, chain=chain, proj=proj,
                        top_maps=[t.pi for t in top_triples], top_triples=top_triples,
                        side_maps=[t.pi for t in side_triples], side_triples=side_triples,
                        side_level=side_level, f=sched, cert_depth=cert, budget=sc.budget)
        res = diagonal(tw)
        for line in res.report.lines:
            report.add(line.tag, f"{name}: {line.subject}", line.ok, line.witness)
    return report


def cmd_extend(sc: Scenario, depth: int, args) -> Report:
    report = Report("extend")
    for name, body in sc.stages.items():
        body = dict(body)
        cond_name = body.pop("start")
        tasks = [sc.get(nm, "tasks") for nm in body.pop("tasks")]
        body.pop("checkpoints", None)
        cond, ctx = _condition_in_context(sc, cond_name)
        q = cond
        for i, task in enumerate(tasks):
            q, entry = extend_condition(q, task, ctx, depth, strict=args.strict, index=i)
            report.add("d14:extend", f"{name}[{i}] {entry.task}", entry.ok,
                       entry.branch + (f" obligations {list(entry.obligations)}"
                                       if entry.obligations else ""))
            sub = check_condition(q, ctx, depth)
            report.add("d14:recheck", f"{name}[{i}]", sub.ok,
                       "" if sub.ok else str(sub.failures()[0]))
    return report


def cmd_meet(sc: Scenario, depth: int, args) -> Report:
    report = Report("meet")
    for name, body in sc.meets.items():
        body = dict(body)
        chain = []
        ctx = None
        for nm in body.pop("chain"):
            cond, c = _condition_in_context(sc, nm)
            chain.append(cond)
            ctx =c
        declared = body.pop("declared_limit", None)
        if body:
            raise PreconditionFailed("meet", f"{name}: unknown field(s) {sorted(body)}")
        q, entry = meet_chain(chain, ctx, depth,
                              declared_limit=None if declared is None else int(declared),
                              strict=args.strict)
        report.add("t91:meet", f"{name} {entry.branch}", entry.ok, entry.detail)
        for j, cond in enumerate(chain):
            v = leq_condition(q, cond, ctx, depth)
            report.add("t91:below", f"{name} element {j}", v.ok,
                       "" if v.ok else str(v.failures()[0]))
        if all(c.labels == chain[0].labels for c in chain):
            report.add("t91:labels", name, q.labels == chain[0].labels,
                       f"{list(q.labels)} vs {list(chain[0].labels)}")
    return report


def cmd_stage(sc: Scenario, depth: int, args) -> Report:
    report = Report("stage")
    for name, body in sc.stages.items():
        body = dict(body)
        cond, ctx = _condition_in_context(sc, body.pop("start"))
        tasks = [sc.get(nm, "tasks") for nm in body.pop("tasks")]
        checkpoints = tuple(int(x) for x in body.pop("checkpoints", []))
        if body:
            raise PreconditionFailed("stage", f"{name}: unknown field(s) {sorted(body)}")
        res = run_stage(ctx, tasks, cond, depth, checkpoints=checkpoints, strict=args.strict)
        for entry in res.trace.entries:
            report.add("t1:task", f"{name}[{entry.index}] {entry.task}", entry.ok,
                       entry.branch + (f" obligations {list(entry.obligations)}"
                                       if entry.obligations else ""))
        v = leq_condition(res.final, cond, ctx, min(depth, 4))
        report.add("t1:final", f"{name} below the start", v.ok,
                   "" if v.ok else str(v.failures()[0]))
    return report


_SUITES = {
    "blockseq": lambda seed, n: suites.block_seq_suite(seed, instances=n or 500,
                                                       chains=max(1, (n or 500) * 2 // 5)),
    "delta": lambda seed, n: suites.delta_suite(seed, instances=n or 200),
    "fibers": lambda seed, n: suites.fiber_suite(seed, instances=n or 100),
    "calibration": lambda seed, n: suites.calibration_suite(seed, instances=n or 50,
                                                            mutations=n or 50),
    "fusion": lambda seed, n: suites.fusion_suite(seed, instances=n or 30),
    "lift": lambda seed, n: suites.lift_suite(seed, instances=n or 30),
    "diagonal": lambda seed, n: suites.diagonal_suite(seed, instances=n or 20),
    "forcing": lambda seed, n: suites.forcing_suite(seed, instances=n or 100),
}


def run_suite(args) -> Report:
    if args.scenario:
        sc = load(args)
        if sc.suite is None:
            raise PreconditionFailed("suite", "the scenario carries no suite entry")
        kind = sc.suite["kind"]
        seed = int(sc.suite.get("seed", args.seed))
        instances = sc.suite.get("instances")
    else:
        kind, seed, instances = args.kind, args.seed, args.instances
        if args.budget is not None:
            set_default_budget(args.budget)
    if kind not in _SUITES:
        raise PreconditionFailed("suite", f"unknown suite kind {kind!r}; "
                                          f"choose from {sorted(_SUITES)}")
    return _SUITES[kind](seed, None if instances is None else int(instances))


if __name__ == "__main__":
    sys.exit(main())
