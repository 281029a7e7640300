"""Command line entry points.

``run`` executes a scenario and exits 0 only when every expectation
holds.  ``matrix`` prints the role-by-service decision matrix computed
from the scenario's rules and compares it with the designed table when
one is declared.  ``validate`` checks a scenario file and lists every
problem found.
"""

from __future__ import annotations

import argparse
import sys

from . import api, harness, scenario
from .scenario import ParseError, ValidationError


def _load(path: str) -> scenario.Scenario:
    try:
        return scenario.load(path)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _build_world(sc: scenario.Scenario, seed: int | None) -> harness.World:
    try:
        return harness.World(sc, seed=seed)
    except ValidationError as exc:
        print(f"error: scenario failed validation ({len(exc.errors)} problem(s))", file=sys.stderr)
        for line in exc.errors:
            print(f"  - {line}", file=sys.stderr)
        raise SystemExit(2)


def _print_report(report: harness.RunReport) -> None:
    for result in report.expectations:
        mark = "PASS" if result.ok else "FAIL"
        print(f"[{mark}] {result.name}: {result.detail}")
    status = "passed" if report.passed else "FAILED"
    print(
        f"scenario {report.scenario} (seed {report.seed}) {status}: "
        f"{sum(1 for e in report.expectations if e.ok)}/{len(report.expectations)} expectations, "
        f"{report.metrics['events']} events, clock {report.metrics['final_clock_ms']}ms"
    )


def cmd_run(args: argparse.Namespace) -> int:
    sc = _load(args.scenario)
    world = _build_world(sc, args.seed)
    if args.serve:
        return _serve(world, args)
    report = world.run()
    if args.log:
        harness.write_log(world, args.log)
    if args.report:
        harness.write_report(report, args.report)
    _print_report(report)
    return 0 if report.passed else 1


def _serve(world: harness.World, args: argparse.Namespace) -> int:
    runner = api.ServeRunner(world, speed=args.speed)
    server = api.make_server(runner, args.port)
    runner.start()
    print(f"serving on http://127.0.0.1:{args.port}{api.API_PREFIX} (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        runner.stop()
    report = world.run() if world.kernel.clock < world.scenario.horizon_ms else None
    if report is None:
        # Horizon already reached while serving; evaluate on the final log.
        results = harness.evaluate_expectations(world.kernel.records, world.scenario.expectations)
        if world.scenario.access_matrix.get("roles"):
            results.append(world.check_access_matrix())
        report = harness.RunReport(
            scenario=world.scenario.name,
            seed=world.seed,
            passed=all(r.ok for r in results),
            expectations=results,
            metrics={
                "events": len(world.kernel.records),
                "final_clock_ms": world.kernel.clock,
            },
        )
    if args.log:
        harness.write_log(world, args.log)
    if args.report:
        harness.write_report(report, args.report)
    _print_report(report)
    return 0 if report.passed else 1


def cmd_matrix(args: argparse.Namespace) -> int:
    sc = _load(args.scenario)
    world = _build_world(sc, args.seed)
    matrix = world.decision_matrix()
    columns = sorted(world.catalog) + ["internet"]
    width = max((len(r) for r in matrix), default=4) + 2
    col_width = max((len(c) for c in columns), default=6) + 2
    print("role".ljust(width) + "".join(c.ljust(col_width) for c in columns))
    for role in sorted(matrix):
        row = matrix[role]
        print(role.ljust(width) + "".join(row[c].ljust(col_width) for c in columns))
    declared = sc.access_matrix.get("roles")
    if not declared:
        return 0
    result = world.check_access_matrix()
    print(f"[{'PASS' if result.ok else 'FAIL'}] access_matrix: {result.detail}")
    return 0 if result.ok else 1


def cmd_validate(args: argparse.Namespace) -> int:
    sc = _load(args.scenario)
    problems = scenario.validate(sc)
    if problems:
        print(f"{args.scenario}: {len(problems)} problem(s)")
        for line in problems:
            print(f"  - {line}")
        return 1
    print(f"{args.scenario}: ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fednet", description="Federated network simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario")
    run_p.add_argument("scenario", help="path to a scenario JSON file")
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument("--log", default=None, help="write the event log (JSON lines) here")
    run_p.add_argument("--report", default=None, help="write the run report (JSON) here")
    run_p.add_argument("--serve", action="store_true", help="expose the control API while running")
    run_p.add_argument("--port", type=int, default=8080, help="control API port (with --serve)")
    run_p.add_argument(
        "--speed",
        type=float,
        default=20.0,
        help="virtual ms advanced per wall ms (with --serve)",
    )
    run_p.set_defaults(func=cmd_run)

    matrix_p = sub.add_parser("matrix", help="print the decision matrix")
    matrix_p.add_argument("scenario", help="path to a scenario JSON file")
    matrix_p.add_argument("--seed", type=int, default=None)
    matrix_p.set_defaults(func=cmd_matrix)

    validate_p = sub.add_parser("validate", help="validate a scenario file")
    validate_p.add_argument("scenario", help="path to a scenario JSON file")
    validate_p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
