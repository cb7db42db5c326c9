#!/usr/bin/env python3
"""
pcurve - command-line front end

    solve     --config problem.json [--out dir] [--h H] [--check-uniqueness]
    verify    --suite name|all --n N --p P [--count K] [--seed S]
    radial    --n N --p P --r R --f EXPR [--tol T]
    converge  --config problem.json --h-list 0.125,0.0625,0.03125
    eval      --lambda 3,2,1 --n 3 --p 2   |   --f EXPR --x 0.3,0.4 [--z Z] [--nu ...]

Exit status: 0 success, 1 usage/config error, 2 solver failure, 3 failed verification.
"""

import argparse
import logging
import sys
from typing import Callable, List, Optional

import numpy as np
from pydantic import ValidationError

from app.exceptions import (
    HomotopyStallError, HypothesisError, InitialGuessError, PCurveError, SolverError,
)
from app.models import DomainType, ExitStatus, SampleSpec
from app.services.fexpr import Env, constant_value, evaluate, is_radial, parse
from app.services.radial import solve_radial
from app.services.solver import DirichletSolver, Problem, uniqueness_check
from app.services.symfunc import PSpec, eval_F, eval_Ft, grad_diag, in_cone
from app.services.verify import cap_radius_for, convergence_study, run_suite, sphere_cap
from app.utils.file_handler import FileHandler
from app.utils.report_generator import ReportGenerator
from config import settings

logger = logging.getLogger("pcurve.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; ours is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _fmt(value: float) -> str:
    return f"{value:.12g}"


class PCurveCLI:
    def __init__(self, out_dir: Optional[str] = None):
        self.files = FileHandler(out_dir)
        self.reports = ReportGenerator()

    # solve

    def cmd_solve(self, args) -> ExitStatus:
        cfg = self.files.load_config(args.config)
        prob = Problem.from_config(cfg, h=args.h)
        print(f"Solving n={cfg.n}, p={cfg.p} on {cfg.domain.type.value} with {prob.grid.node_count} nodes (h={prob.h:g})")

        solver = DirichletSolver(prob, cfg.solver)
        try:
            u, report = solver.solve()
        except HomotopyStallError as e:
            stall = self.reports.generate_stall_report(cfg, str(e), e.last_t, e.trace)
            path = self.files.write_json(stall, cfg.output.report_json)
            print(f"Solver stalled at t={e.last_t:.6g}: {e}")
            print(f"Stall report saved to: {path}")
            return ExitStatus.SOLVER_FAILURE

        artifacts = {
            "solution_csv": self.files.write_solution(prob.grid, u, cfg.output.solution_csv),
        }
        data = self.reports.generate_solve_report(cfg, report, artifacts)
        if args.check_uniqueness:
            data["uniqueness"] = uniqueness_check(prob, cfg.solver)
        artifacts["report_json"] = str(self.files.resolve(cfg.output.report_json))
        self.files.write_json(data, cfg.output.report_json)

        if args.verbose:
            print(self.reports.format_report_for_display(report))
        print(self.reports.summary_line(report))
        return ExitStatus.SUCCESS if report.converged else ExitStatus.SOLVER_FAILURE

    # verify

    def cmd_verify(self, args) -> ExitStatus:
        names = settings.SUITES if args.suite == "all" else [args.suite]
        failed = []
        for name in names:
            ss = SampleSpec(n=args.n, p=args.p, count=args.count, seed=args.seed,
                            near_boundary_fraction=args.near_boundary_fraction)
            if name == "key1" and args.suite == "all" and 2 * args.p < args.n:
                logger.warning("skipping key1: needs p >= n/2")
                continue
            result = run_suite(name, ss)
            self.files.write_json(self.reports.suite_report(result), f"verify_{name}.json")
            print(self.reports.format_suite_for_display(result))
            if not result.passed:
                failed.append(name)
        if failed:
            print(f"FAILED suites: {', '.join(failed)}")
            return ExitStatus.VERIFICATION_FAILURE
        return ExitStatus.SUCCESS

    # radial

    def cmd_radial(self, args) -> ExitStatus:
        profile = solve_radial(args.n, args.p, args.r, args.f, tol=args.tol)
        path = self.files.write_radial_profile(profile.table(args.points), args.output)
        print(f"u(0) = {profile.u0:.10g} after {profile.iterations} bisections")
        print(f"Profile saved to: {path}")
        return ExitStatus.SUCCESS

    # converge

    def _oracle(self, cfg) -> Callable[[np.ndarray], np.ndarray]:
        if cfg.domain.type != DomainType.BALL:
            raise UsageError("convergence studies need a ball domain (cap or radial oracle)")
        radius = cfg.domain.typed_params().radius
        f = parse(cfg.f, cfg.n)
        value = constant_value(f)
        if value is not None and value > 0:
            cap = sphere_cap(cfg.n, cfg.p, cap_radius_for(cfg.n, cfg.p, value), radius)
            logger.info("using the sphere-cap oracle (R=%.6g)", cap.R)
            return cap
        if not is_radial(f, cfg.n):
            raise UsageError("convergence studies need a constant or radial right-hand side")
        logger.info("using the radial shooting oracle")
        return solve_radial(cfg.n, cfg.p, radius, f).at_points

    def cmd_converge(self, args) -> ExitStatus:
        cfg = self.files.load_config(args.config)
        oracle = self._oracle(cfg)
        rows = convergence_study(lambda h: Problem.from_config(cfg, h=h), oracle, args.h_list, cfg.solver)
        path = self.files.write_convergence(rows, args.output)
        print(self.reports.format_convergence_for_display(rows))
        print(f"Table saved to: {path}")
        return ExitStatus.SUCCESS

    # eval

    def cmd_eval(self, args) -> ExitStatus:
        if args.lam is None and args.f is None:
            raise UsageError("eval needs --lambda or --f")
        if args.lam is not None:
            self._eval_operator(args)
        if args.f is not None:
            self._eval_expression(args)
        return ExitStatus.SUCCESS

    def _eval_operator(self, args) -> None:
        if args.n is None or args.p is None:
            raise UsageError("--lambda needs --n and --p")
        spec = PSpec(args.n, args.p)
        if len(args.lam) != spec.n:
            raise UsageError(f"--lambda needs {spec.n} entries, got {len(args.lam)}")
        lam = np.asarray(args.lam)
        print(f"F={_fmt(eval_F(lam, spec))}")
        if not in_cone(lam, spec):
            print("in_cone=false")
            return
        print(f"Ftilde={_fmt(eval_Ft(lam, spec))}")
        print("grad=" + ",".join(_fmt(v) for v in grad_diag(lam, spec)))
        print("in_cone=true")

    def _eval_expression(self, args) -> None:
        if args.x is None:
            raise UsageError("--f needs --x")
        n = len(args.x)
        nu = np.asarray(args.nu) if args.nu is not None else np.concatenate([np.zeros(n), [1.0]])
        if nu.shape != (n + 1,):
            raise UsageError(f"--nu needs {n + 1} entries")
        value = evaluate(parse(args.f, n), Env(np.asarray(args.x), np.asarray(args.z), nu))
        print(f"f={_fmt(float(value))}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcurve", description="p-convex prescribed-curvature Dirichlet solver")
    parser.add_argument("--out", default=None, help="output directory (default: PCURVE_OUTPUT_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve the Dirichlet problem from a JSON config")
    solve.add_argument("--config", required=True)
    solve.add_argument("--h", type=float, default=None, help="override grid.h")
    solve.add_argument("--check-uniqueness", action="store_true",
                       help="solve again from a second start and report the difference")
    solve.add_argument("--verbose", "-v", action="store_true")

    verify = sub.add_parser("verify", help="run randomized property suites")
    verify.add_argument("--suite", required=True, choices=settings.SUITES + ["all"])
    verify.add_argument("--n", type=int, required=True)
    verify.add_argument("--p", type=int, required=True)
    verify.add_argument("--count", type=int, default=1000)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--near-boundary-fraction", type=float, default=settings.NEAR_BOUNDARY_FRACTION)

    radial = sub.add_parser("radial", help="radial reference solution by shooting")
    radial.add_argument("--n", type=int, required=True)
    radial.add_argument("--p", type=int, required=True)
    radial.add_argument("--r", type=float, required=True)
    radial.add_argument("--f", required=True)
    radial.add_argument("--tol", type=float, default=1e-10)
    radial.add_argument("--points", type=int, default=201)
    radial.add_argument("--output", default="radial_profile.csv")

    converge = sub.add_parser("converge", help="grid refinement study against an exact or radial oracle")
    converge.add_argument("--config", required=True)
    converge.add_argument("--h-list", type=_floats, required=True)
    converge.add_argument("--output", default="convergence.csv")

    ev = sub.add_parser("eval", help="evaluate F, F~ and the gradient, or a right-hand side expression")
    ev.add_argument("--lambda", dest="lam", type=_floats, default=None)
    ev.add_argument("--n", type=int, default=None)
    ev.add_argument("--p", type=int, default=None)
    ev.add_argument("--f", default=None)
    ev.add_argument("--x", type=_floats, default=None)
    ev.add_argument("--z", type=float, default=0.0)
    ev.add_argument("--nu", type=_floats, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cli = PCurveCLI(args.out)
        handler = {
            "solve": cli.cmd_solve,
            "verify": cli.cmd_verify,
            "radial": cli.cmd_radial,
            "converge": cli.cmd_converge,
            "eval": cli.cmd_eval,
        }[args.command]
        return int(handler(args))
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return int(ExitStatus.USAGE)
    except ValidationError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return int(ExitStatus.USAGE)
    except (SolverError, InitialGuessError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return int(ExitStatus.SOLVER_FAILURE)
    except HypothesisError as e:
        print(f"hypothesis violated: {e}", file=sys.stderr)
        return int(ExitStatus.USAGE)
    except (PCurveError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return int(ExitStatus.USAGE)


if __name__ == "__main__":
    sys.exit(main())
