"""
Command-line entry point: infograd mi | grad | bregman | verify | design.

Every run prints (or writes with --out) a JSON report whose numerical
sections depend only on argv, the input files and the seed; wall-clock
time is kept in a separate "timing" section.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from shared.config import settings
from shared.ecs_logger import run_logger
from shared.errors import InfogradError, ValidationError, exit_code_for
from shared.numerics import RngStream, mat_to_csv, read_vec_csv, write_csv
from infograd.design.projection import DesignOptions, DesignProblem, design_phi, rounding_gap
from infograd.estimators.gradients import (
    FdScheme,
    GradientMethod,
    GradientReport,
    grad_dark_poisson,
    grad_fd_matrix,
    grad_phi_gaussian,
    grad_phi_poisson,
    grad_phi_poisson_mc,
    grad_poisson,
)
from infograd.estimators.information import DEFAULT_EPSILON, MiMethod, mi_gaussian, mi_poisson
from infograd.evaluators.suites import DEFAULT_BUDGET, SUITES, run_suite
from infograd.generators.matrix import bregman_generalized, gaussian_generator, poisson_generator
from infograd.generators.scalar import CATALOG, bregman_scalar, scalar_generator
from infograd.models.channels import GaussianChannel, PoissonChannel, load_channel
from infograd.models.input_model import FiniteDistribution

logger = logging.getLogger(__name__)

DEFAULT_MC_BUDGET = 100000


class UsageError(Exception):
    """argparse asked to exit; carries its exit status."""

    def __init__(self, status: int):
        super().__init__(status)
        self.status = status


class _Parser(argparse.ArgumentParser):
    def exit(self, status: int = 0, message: Optional[str] = None):
        if message:
            self._print_message(message, sys.stderr)
        raise UsageError(status)


def file_input(path: str) -> Dict[str, Any]:
    """Path plus SHA-256 of the file content."""
    try:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise ValidationError(f"cannot read input {path}: {e}")
    return {"path": path, "sha256": digest}


def _stream(args: argparse.Namespace) -> RngStream:
    return RngStream(args.seed)


def _load(args: argparse.Namespace):
    return load_channel(args.channel), FiniteDistribution.from_json(args.input)


# Subcommands

def cmd_mi(args: argparse.Namespace) -> Dict[str, Any]:
    channel, prior = _load(args)
    if args.method is None:
        method = MiMethod.ENUMERATION if isinstance(channel, PoissonChannel) else MiMethod.MONTE_CARLO
    else:
        method = MiMethod.parse(args.method)

    if isinstance(channel, PoissonChannel):
        estimate = mi_poisson(channel, prior, method, epsilon=args.epsilon, budget=args.budget or DEFAULT_MC_BUDGET,
                              rng=_stream(args), threads=args.threads)
    else:
        estimate = mi_gaussian(channel, prior, method, budget=args.budget, rng=_stream(args), threads=args.threads)
    return {"channel": channel.kind, **estimate.to_dict()}


def _gradient(args: argparse.Namespace, channel, prior: FiniteDistribution) -> GradientReport:
    method = GradientMethod.parse(args.method)
    budget = args.budget or DEFAULT_MC_BUDGET

    if isinstance(channel, GaussianChannel):
        if args.wrt != 'phi':
            raise ValidationError("the Gaussian channel has no dark current; use --wrt phi")
        if method is GradientMethod.FINITE_DIFFERENCE:
            return grad_fd_matrix(channel, prior, 'phi', args.h, FdScheme(args.scheme))
        return grad_phi_gaussian(channel, prior, budget, _stream(args), args.threads)

    if method is GradientMethod.FINITE_DIFFERENCE:
        if args.wrt == 'both':
            raise ValidationError("finite differences take one of --wrt phi or --wrt dark")
        return grad_fd_matrix(channel, prior, args.wrt, args.h, FdScheme(args.scheme), args.epsilon)
    if method is GradientMethod.MONTE_CARLO:
        report = grad_phi_poisson_mc(channel, prior, budget, _stream(args), args.threads)
        if args.wrt == 'phi':
            return GradientReport(report.grad_phi, None, report.method, 'poisson', report.error, samples=report.samples)
        if args.wrt == 'dark':
            return GradientReport(None, report.grad_dark, report.method, 'poisson', dark_error=report.dark_error,
                                  samples=report.samples)
        return report
    if method is not GradientMethod.THEOREM:
        raise ValidationError(f"method {method.value} does not apply to the Poisson channel")
    if args.wrt == 'phi':
        return grad_phi_poisson(channel, prior, args.epsilon, args.threads)
    if args.wrt == 'dark':
        return grad_dark_poisson(channel, prior, args.epsilon, args.threads)
    return grad_poisson(channel, prior, args.epsilon, threads=args.threads)


def cmd_grad(args: argparse.Namespace) -> Dict[str, Any]:
    channel, prior = _load(args)
    return _gradient(args, channel, prior).to_dict()


def cmd_bregman(args: argparse.Namespace) -> Dict[str, Any]:
    x = read_vec_csv(args.x)
    y = read_vec_csv(args.y)
    if args.generator in CATALOG:
        value = bregman_scalar(scalar_generator(args.generator), x, y)
        return {"generator": args.generator, "divergence": mat_to_csv(np.array([value]))}

    if args.generator not in ('poisson', 'gaussian'):
        known = ', '.join(sorted(CATALOG) + ['gaussian', 'poisson'])
        raise ValidationError(f"unknown generator {args.generator!r}; choose from {known}")
    if not args.channel:
        raise ValidationError(f"generator {args.generator} needs --channel")
    channel = load_channel(args.channel)
    if args.generator == 'poisson':
        if not isinstance(channel, PoissonChannel):
            raise ValidationError("the poisson generator needs a Poisson channel")
        g = poisson_generator(channel.phi, channel.dark)
    else:
        g = gaussian_generator(channel.phi)
    divergence = bregman_generalized(g, x, y)
    return {"generator": g.name, "shape": list(g.shape), "cone": g.cone.value,
            "in_cone": bool(g.order.contains(divergence)), "divergence": mat_to_csv(divergence)}


def cmd_verify(args: argparse.Namespace) -> Dict[str, Any]:
    return run_suite(args.suite, args.seed, args.budget or DEFAULT_BUDGET, args.threads).to_dict()


def cmd_design(args: argparse.Namespace) -> Dict[str, Any]:
    problem = DesignProblem.from_json(args.problem)
    opts = DesignOptions(max_iters=args.max_iters, tol=args.tol, mi_method=MiMethod.parse(args.mi),
                         budget=args.budget or DEFAULT_MC_BUDGET, seed=args.seed, epsilon=args.epsilon,
                         threads=args.threads)
    trace = design_phi(problem, opts)
    result: Dict[str, Any] = {
        "iterations": trace.iterations,
        "initial_mi": trace.initial_mi,
        "final_mi": trace.final_mi,
        "stop_reason": trace.stop_reason,
        "phi": mat_to_csv(trace.phi),
    }
    if args.threshold is not None:
        result["rounding"] = rounding_gap(problem, trace.phi, args.threshold, args.epsilon).to_dict()
    if args.phi_out:
        write_csv(args.phi_out, trace.phi)
    if args.trace:
        Path(args.trace).write_text(json.dumps(trace.to_dict(), indent=2) + '\n', encoding='utf-8')
    return result


COMMANDS: Dict[str, Callable[[argparse.Namespace], Dict[str, Any]]] = {
    'mi': cmd_mi,
    'grad': cmd_grad,
    'bregman': cmd_bregman,
    'verify': cmd_verify,
    'design': cmd_design,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='infograd', description='Mutual information and its gradients for Poisson and '
                                                  'Gaussian channels, with Bregman-divergence checks.')
    common = _Parser(add_help=False)
    common.add_argument('--threads', type=int, default=None, help='worker threads (default: INFOGRAD_THREADS)')
    common.add_argument('--seed', type=int, default=0, help='random seed')
    common.add_argument('--budget', type=int, default=None, help='Monte Carlo samples or quadrature order')

    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    mi = sub.add_parser('mi', parents=[common], help='mutual information I(X;Y)')
    mi.add_argument('--channel', required=True)
    mi.add_argument('--input', required=True, help='prior JSON')
    mi.add_argument('--method', choices=['enum', 'mc', 'quad'], default=None)
    mi.add_argument('--epsilon', type=float, default=DEFAULT_EPSILON)
    mi.add_argument('--out', help='write the report here instead of standard output')

    grad = sub.add_parser('grad', parents=[common], help='gradient of I(X;Y) in phi or the dark current')
    grad.add_argument('--channel', required=True)
    grad.add_argument('--input', required=True, help='prior JSON')
    grad.add_argument('--wrt', choices=['phi', 'dark', 'both'], default='phi')
    grad.add_argument('--method', choices=['theorem', 'fd', 'mc'], default='theorem')
    grad.add_argument('--epsilon', type=float, default=DEFAULT_EPSILON)
    grad.add_argument('--h', type=float, default=None, help='finite-difference step')
    grad.add_argument('--scheme', choices=[s.value for s in FdScheme], default=FdScheme.AUTO.value)
    grad.add_argument('--out')

    bregman = sub.add_parser('bregman', parents=[common], help='Bregman divergence D_F(x, y)')
    bregman.add_argument('--generator', required=True)
    bregman.add_argument('--x', required=True, help='CSV vector')
    bregman.add_argument('--y', required=True, help='CSV vector')
    bregman.add_argument('--channel', help='channel JSON for the poisson and gaussian generators')
    bregman.add_argument('--out')

    verify = sub.add_parser('verify', parents=[common], help='run a verification suite')
    verify.add_argument('--suite', choices=list(SUITES), default='all')
    verify.add_argument('--out')

    design = sub.add_parser('design', parents=[common], help='design phi by projected gradient ascent')
    design.add_argument('--problem', required=True)
    design.add_argument('--max-iters', type=int, default=100)
    design.add_argument('--tol', type=float, default=1e-6)
    design.add_argument('--mi', choices=['enum', 'mc'], default='enum')
    design.add_argument('--epsilon', type=float, default=DEFAULT_EPSILON)
    design.add_argument('--threshold', type=float, default=None, help='also report the binary rounding gap')
    design.add_argument('--out', dest='phi_out', help='final phi as CSV')
    design.add_argument('--trace', help='iteration trace as JSON')
    design.add_argument('--report', dest='out', help='write the report here instead of standard output')
    return parser


def _inputs(args: argparse.Namespace) -> Dict[str, Any]:
    inputs = {}
    for key in ('channel', 'input', 'x', 'y', 'problem'):
        path = getattr(args, key, None)
        if path:
            inputs[key] = file_input(path)
    return inputs


def run(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the subcommand, emit the report; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return e.status

    started = time.perf_counter()
    run_id = run_logger.log_run_start(args.command, argv, args.seed, getattr(args, 'suite', None))
    code = 0
    try:
        if args.threads is not None:
            settings.resolve_threads(args.threads)
        inputs = _inputs(args)
        run_logger.log_inputs(run_id, inputs)
        outputs = COMMANDS[args.command](args)
        elapsed_ms = int((time.perf_counter() - started) * 1000)
        if args.command == 'verify':
            for c in outputs["checks"]:
                run_logger.log_verification(run_id, c)
            code = 0 if outputs["passed"] else 1
        run_logger.log_computation(run_id, outputs, elapsed_ms)

        report = {
            "command": args.command,
            "argv": argv,
            "inputs": inputs,
            "seed": args.seed,
            "outputs": outputs,
            "timing": {"wall_clock_ms": elapsed_ms},
        }
        text = json.dumps(report, indent=2) + '\n'
        if args.out:
            Path(args.out).write_text(text, encoding='utf-8')
        else:
            sys.stdout.write(text)
    except InfogradError as e:
        code = exit_code_for(e)
        run_logger.log_error(run_id, e, exit_code=code)
        print(f"infograd {args.command}: {e}", file=sys.stderr)
    except Exception as e:
        code = 1
        logger.exception(f"Unexpected failure in {args.command}")
        run_logger.log_error(run_id, e, exit_code=code)
        print(f"infograd {args.command}: unexpected error: {e}", file=sys.stderr)

    run_logger.log_run_complete(run_id, code, int((time.perf_counter() - started) * 1000))
    return code


def main():
    settings.configure_logging()
    sys.exit(run())


if __name__ == '__main__':
    main()
