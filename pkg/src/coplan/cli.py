"""Command-line front end: solve, compare, sweep, validate.

Exit codes: 0 success, 2 usage or configuration error, 3 infeasible
model, 4 internal bound violation.  Failures print a machine-readable
JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import decomposition, report
from .dispatch import BigMError, DispatchInfeasibleError
from .instance_io import AlgoParams, InstanceError, load_instance, write_report
from .mathprog import SolveFailure
from .network import MasterInfeasibleError
from .transport import PlanningInfeasibleError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_BOUNDS = 4


def _params_from_args(args) -> AlgoParams:
    return AlgoParams(
        epsilon=args.epsilon,
        epsilon_tilde=args.epsilon_tilde,
        eps_up_init=args.eps_up_init,
        alpha=args.alpha,
        seed=args.seed,
        max_iterations=args.max_iterations,
    )


def _fail(kind: str, exc: Exception, code: int) -> int:
    payload = {"error": {"kind": kind, "type": type(exc).__name__, "message": str(exc)}}
    if isinstance(exc, InstanceError):
        payload["error"]["problems"] = exc.problems
    print(json.dumps(payload), file=sys.stderr)
    return code


def _load(args):
    return load_instance(args.instance)


def cmd_solve(args) -> int:
    try:
        instance = _load(args)
        params = _params_from_args(args)
        result = report.run_algorithm(args.algorithm, instance, params)
    except InstanceError as exc:
        return _fail("instance", exc, EXIT_INFEASIBLE)
    except (PlanningInfeasibleError, DispatchInfeasibleError, MasterInfeasibleError) as exc:
        return _fail("infeasible", exc, EXIT_INFEASIBLE)
    except (decomposition.BoundSandwichError, decomposition.ConvergenceError,
            SolveFailure, BigMError) as exc:
        return _fail("bounds", exc, EXIT_BOUNDS)
    except ValueError as exc:
        return _fail("config", exc, EXIT_USAGE)
    outdir = Path(args.output)
    write_report(result.to_report_dict(), [row.as_dict() for row in result.trace], outdir)
    report.write_convergence_plot(result.trace, outdir)
    print(f"algorithm        : {args.algorithm}")
    print(f"built lines      : {sorted(result.plan.built_lines)}")
    print(f"stations         : {sorted(result.plan.open_hubs)}")
    print(f"objective        : {result.objective:.6f} (10^4 CNY / yr)")
    print(f"certified gap    : {result.gap_certified:.3e}")
    print(f"master solves    : {result.iterations} "
          f"(explorations {result.explorations}, exploitations {result.exploitations})")
    print(f"terminated       : {result.terminated}")
    print(f"outputs          : {outdir / 'result.json'}, {outdir / 'trace.csv'}, "
          f"{outdir / 'convergence.svg'}")
    return EXIT_OK if result.terminated else EXIT_BOUNDS


def cmd_compare(args) -> int:
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    if not algorithms:
        print(json.dumps({"error": {"kind": "config", "message": "empty algorithm list"}}),
              file=sys.stderr)
        return EXIT_USAGE
    try:
        instance = _load(args)
        for name in algorithms:
            if name not in report.ALGORITHMS:
                raise ValueError(f"unknown algorithm {name!r}")
    except InstanceError as exc:
        return _fail("instance", exc, EXIT_INFEASIBLE)
    except ValueError as exc:
        return _fail("config", exc, EXIT_USAGE)
    rows = report.compare_algorithms(instance, _params_from_args(args), algorithms)
    report.write_compare_outputs(rows, args.output)
    width = max(len(r.algorithm) for r in rows)
    for row in rows:
        if row.objective is None:
            print(f"{row.algorithm:<{width}}  {row.status}")
        else:
            print(f"{row.algorithm:<{width}}  objective {row.objective:.6f}  "
                  f"iterations {row.iterations}  wall {row.wall_ms:.0f} ms")
    print(f"outputs: {Path(args.output) / 'compare.csv'}, {Path(args.output) / 'compare.svg'}")
    return EXIT_OK if all(r.objective is not None for r in rows) else EXIT_BOUNDS


def cmd_sweep(args) -> int:
    try:
        grid = [float(v) for v in args.grid.split(",") if v.strip()]
        if not grid:
            raise ValueError("sweep grid is empty")
        instance = _load(args)
        rows = report.run_sweep(instance, _params_from_args(args), args.algorithm,
                                args.parameter, grid, jobs=args.jobs)
    except InstanceError as exc:
        return _fail("instance", exc, EXIT_INFEASIBLE)
    except ValueError as exc:
        return _fail("config", exc, EXIT_USAGE)
    report.write_sweep_outputs(rows, args.output)
    for row in rows:
        if row["objective"] is None:
            print(f"{row['parameter']}={row['value']:g}  {row['status']}")
        else:
            print(f"{row['parameter']}={row['value']:g}  objective {row['objective']:.6f}  "
                  f"loss {row['worst_case_loss']:.6f}  plan {row['plan_fingerprint']}")
    print(f"outputs: {Path(args.output) / 'sweep.csv'}, {Path(args.output) / 'sweep.svg'}")
    return EXIT_OK if all(r["objective"] is not None for r in rows) else EXIT_BOUNDS


def cmd_validate(args) -> int:
    try:
        instance = _load(args)
    except InstanceError as exc:
        return _fail("instance", exc, EXIT_INFEASIBLE)
    print(f"{instance.name}: valid "
          f"({len(instance.nodes)} nodes, {len(instance.candidate_lines)} candidate lines, "
          f"{len(instance.hubs)} hubs, {instance.periods} periods)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coplan",
        description="Distribution-network and charging-station co-planning solver")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, algorithm=True):
        p.add_argument("--instance", required=True, help="instance JSON file")
        if algorithm:
            p.add_argument("--algorithm", default="aiccg",
                           choices=sorted(report.ALGORITHMS), help="algorithm to run")
        p.add_argument("--epsilon", type=float, default=1e-4,
                       help="termination gap (default 1e-4)")
        p.add_argument("--epsilon-tilde", type=float, default=None,
                       help="exploitation threshold (default epsilon/(1+epsilon)/2)")
        p.add_argument("--eps-up-init", type=float, default=0.1,
                       help="initial master optimality gap")
        p.add_argument("--alpha", type=float, default=0.5,
                       help="master-gap shrink factor per exploitation")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-iterations", type=int, default=200)
        p.add_argument("--output", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel grid points (sweep)")

    p_solve = sub.add_parser("solve", help="run one algorithm and write result/trace")
    common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_cmp = sub.add_parser("compare", help="run several algorithms on one instance")
    common(p_cmp, algorithm=False)
    p_cmp.add_argument("--algorithms", default="ccg,iccg,aiccg",
                       help="comma-separated algorithm list")
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="sensitivity sweep over a parameter grid")
    common(p_sweep)
    p_sweep.add_argument("--parameter", required=True, choices=["diu-width", "fleet-mu"])
    p_sweep.add_argument("--grid", required=True, help="comma-separated multipliers")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="validate an instance file")
    p_val.add_argument("--instance", required=True)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
