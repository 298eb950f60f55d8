"""
Verification suites behind `infograd verify`.

Every check is a dict {name, passed, metric, tolerance, witness, informational}.
Informational checks record findings without failing the suite. Checks carry
no timing, so a seed fully determines the report.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from shared.errors import ValidationError
from shared.numerics import RngStream
from infograd.estimators.gradients import FdScheme, FdTarget, grad_fd, grad_gaussian_fd_matrix, grad_phi_poisson_mc, grad_poisson
from infograd.evaluators.equivalence import (
    corollary_checks,
    dark_gradient_identity,
    gaussian_bregman_gradient,
    poisson_bregman_gradient,
)
from infograd.evaluators.minimizer import OutcomeSpace, Partition, minimizer_check, recover_minimizer
from infograd.evaluators.properties import check_properties
from infograd.generators.cones import PSD
from infograd.generators.matrix import bregman_generalized, gaussian_generator, poisson_generator, stacked_generator
from infograd.generators.scalar import (
    CATALOG,
    bregman_scalar,
    dual_point,
    legendre_dual,
    sample_domain,
    scalar_generator,
    scalar_poisson_generator,
)
from infograd.instances import s1, v1, v1_gaussian, v1_prior

logger = logging.getLogger(__name__)

SUITES = ('bregman', 'gradients', 'all')

DEFAULT_BUDGET = 1000000
PROPERTY_TRIALS = 10000
MINIMIZER_TRIALS = 10000
DUALITY_PAIRS = 1000
MC_BUDGETS = (10000, 100000, 1000000)
MC_REPLICATES = 4

IDENTITY_TOLERANCE = 1e-12
DUALITY_TOLERANCE = 1e-9
INDISCERNIBLE_TOLERANCE = 1e-9
SCALAR_FD_TOLERANCE = 1e-5
VECTOR_FD_TOLERANCE = 1e-4
FD_STEP = 1e-4


def check(name: str, metric: float, tolerance: float, informational: bool = False, **witness: Any) -> Dict[str, Any]:
    metric = float(metric)
    return {
        "name": name,
        "passed": bool(metric <= tolerance),
        "metric": metric,
        "tolerance": tolerance,
        "witness": witness,
        "informational": informational,
    }


@dataclass
class SuiteReport:
    suite: str
    seed: int
    budget: int
    checks: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks if not c["informational"])

    @property
    def failures(self) -> List[str]:
        return [c["name"] for c in self.checks if not c["passed"] and not c["informational"]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "suite": self.suite,
            "seed": self.seed,
            "budget": self.budget,
            "passed": self.passed,
            "failures": self.failures,
            "checks": self.checks,
        }


class VerificationSuite:
    """
    Runs the Bregman and gradient checks on the canonical instances.

    Each group draws from its own stream of the seed, so adding a check to
    one group leaves the numbers of the others unchanged.
    """

    def __init__(self, seed: int = 0, budget: int = DEFAULT_BUDGET, threads: Optional[int] = None):
        if budget < 1:
            raise ValidationError(f"budget must be >= 1, got {budget}")
        self.seed = seed
        self.budget = budget
        self.threads = threads

    def _stream(self, group: int) -> RngStream:
        return RngStream(self.seed, stream_id=group)

    def run(self, name: str) -> SuiteReport:
        if name not in SUITES:
            raise ValidationError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
        report = SuiteReport(suite=name, seed=self.seed, budget=self.budget)
        if name in ('bregman', 'all'):
            report.checks += self.bregman_checks()
        if name in ('gradients', 'all'):
            report.checks += self.gradient_checks()
        logger.info(f"Suite {name}: {len(report.checks)} checks, failures: {report.failures or 'none'}")
        return report

    # Bregman

    def bregman_checks(self) -> List[Dict[str, Any]]:
        return (self._catalog_examples() + self._zero_at_equal_points() + self._indiscernibles()
                + self._duality() + self._gaussian_identity() + self._property_sweeps() + self._minimizer())

    def _catalog_examples(self) -> List[Dict[str, Any]]:
        squared = bregman_scalar(scalar_generator('squared_norm'), [1.0, 2.0], [0.0, 0.0])
        kl = bregman_scalar(scalar_generator('negative_entropy'), [0.5, 0.5], [0.9, 0.1])
        kl_exact = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)

        relative = scalar_generator('relative_entropy')
        x, y = np.array([2.0]), np.array([0.5])
        primal = bregman_scalar(relative, x, y)
        conjugate = legendre_dual(relative)
        dual = bregman_scalar(conjugate, dual_point(relative, y), dual_point(relative, x))
        closed = 2.0 * np.log(4.0) - 1.5
        return [
            check('squared_norm_example', abs(squared - 5.0), IDENTITY_TOLERANCE, value=squared),
            check('negative_entropy_is_kl', abs(kl - kl_exact), IDENTITY_TOLERANCE, value=kl, kl=float(kl_exact)),
            check('relative_entropy_duality_example', max(abs(primal - closed), abs(dual - closed)),
                  DUALITY_TOLERANCE, primal=primal, dual=dual, closed_form=float(closed)),
        ]

    def _zero_at_equal_points(self) -> List[Dict[str, Any]]:
        stream = self._stream(1)
        worst = {}
        for name in sorted(CATALOG):
            g = scalar_generator(name)
            points = sample_domain(g.domain, stream.child(len(worst)), (100, 3))
            worst[name] = max(abs(bregman_scalar(g, p, p)) for p in points)

        v1_channel, _ = v1()
        matrix = {
            'poisson': poisson_generator(v1_channel.phi, v1_channel.dark),
            'gaussian': gaussian_generator(v1_channel.phi),
            'stacked': stacked_generator([scalar_generator('relative_entropy'), scalar_generator('itakura_saito')],
                                         2, 2, 2),
        }
        for label, g in matrix.items():
            points = g.sample(stream.child(len(worst)), 1000)
            worst[label] = float(np.abs(bregman_generalized(g, points, points)).max())
        return [check('divergence_zero_at_equal_points', max(worst.values()), IDENTITY_TOLERANCE, per_generator=worst)]

    def _indiscernibles(self) -> List[Dict[str, Any]]:
        """argmin_y D_F(x, y) is x itself for every catalog generator."""
        stream = self._stream(2)
        distances = {}
        for index, name in enumerate(sorted(CATALOG)):
            g = scalar_generator(name)
            single = stacked_generator([g], 1, 1, 2)
            worst = 0.0
            for x in sample_domain(g.domain, stream.child(index), (5, 2)):
                space = OutcomeSpace(x[None, :], np.array([1.0]))
                y = recover_minimizer(single, space, x0=x + 0.25)
                worst = max(worst, float(np.linalg.norm(y - x)))
            distances[name] = worst
        return [check('identity_of_indiscernibles', max(distances.values()), INDISCERNIBLE_TOLERANCE,
                      per_generator=distances)]

    def _duality(self) -> List[Dict[str, Any]]:
        stream = self._stream(3)
        checks = []
        for index, name in enumerate(sorted(CATALOG)):
            g = scalar_generator(name)
            if not g.has_closed_conjugate():
                continue
            checks.append(self._duality_pairs(g, stream.child(index), DUALITY_PAIRS, informational=False))

        # no closed conjugate once the dark current is positive: numerical inversion
        numerical = scalar_poisson_generator(1.0, 0.5)
        checks.append(self._duality_pairs(numerical, stream.child(len(CATALOG)), 100, informational=True))
        return checks

    @staticmethod
    def _duality_pairs(g, stream: RngStream, pairs: int, informational: bool) -> Dict[str, Any]:
        conjugate = legendre_dual(g)
        xs = sample_domain(g.domain, stream, (pairs, 3))
        ys = sample_domain(g.domain, stream, (pairs, 3))
        worst = 0.0
        witness = None
        for x, y in zip(xs, ys):
            primal = bregman_scalar(g, x, y)
            dual = bregman_scalar(conjugate, dual_point(g, y), dual_point(g, x))
            if abs(primal - dual) > worst:
                worst = abs(primal - dual)
                witness = {"x": x.tolist(), "y": y.tolist(), "primal": primal, "dual": dual}
        return check(f'duality_{g.name}', worst, DUALITY_TOLERANCE, informational=informational,
                     pairs=pairs, conjugate=conjugate.name, worst_pair=witness)

    def _gaussian_identity(self) -> List[Dict[str, Any]]:
        stream = self._stream(4)
        phi = stream.generator.standard_normal((2, 3))
        g = gaussian_generator(phi)
        x = g.sample(stream, 1000)
        y = g.sample(stream, 1000)
        diff = x - y
        closed = np.einsum('ij,kj,kl->kil', phi, diff, diff)
        divergence = bregman_generalized(g, x, y)
        error = np.abs(divergence - closed).max(axis=(-2, -1)) / np.maximum(1.0, np.abs(closed).max(axis=(-2, -1)))
        return [check('gaussian_generator_outer_product', error.max(), IDENTITY_TOLERANCE, pairs=1000)]

    def _property_sweeps(self) -> List[Dict[str, Any]]:
        stream = self._stream(5)
        v1_channel, _ = v1()
        sweeps = [
            (gaussian_generator(np.eye(2)), PSD, False),
            (stacked_generator([scalar_generator('relative_entropy'), scalar_generator('itakura_saito')], 2, 2, 2),
             None, False),
            (stacked_generator([scalar_generator('squared_norm'), scalar_generator('exponential')], 2, 3, 2),
             None, False),
            (poisson_generator(v1_channel.phi, v1_channel.dark), None, True),
        ]
        checks = []
        for index, (g, cone, informational) in enumerate(sweeps):
            report = check_properties(g, cone=cone, trials=PROPERTY_TRIALS, rng=stream.child(index),
                                      threads=self.threads)
            violations = report.nonnegativity_violations + report.convexity_violations
            algebra = max(report.linearity_error, report.frechet_linearity_error, report.frechet_directional_error)
            checks.append(check(f'properties_{g.name}_{report.cone}', violations, 0, informational=informational,
                                report=report.to_dict()))
            checks.append(check(f'linearity_{g.name}', report.linearity_error, 1e-10,
                                frechet_linearity=report.frechet_linearity_error,
                                frechet_directional=report.frechet_directional_error, algebra=algebra))
        return checks

    def _minimizer(self) -> List[Dict[str, Any]]:
        stream = self._stream(6)
        channel, prior = v1()
        joint = OutcomeSpace.from_channel(channel, prior)
        stacked = stacked_generator([scalar_generator('squared_norm'), scalar_generator('exponential')], 2, 2, 2)

        checks = []
        cases = [
            (stacked, joint, Partition.trivial(joint), False),
            (stacked, joint, Partition.by_output_parity(joint, 0), False),
            (poisson_generator(channel.phi, channel.dark), joint, Partition.by_output_parity(joint, 0), True),
        ]
        for index, (g, space, partition, informational) in enumerate(cases):
            report = minimizer_check(g, space, partition, MINIMIZER_TRIALS, stream.child(index), self.threads)
            checks.append(check(f'minimizer_{g.name}_{partition.name}', report.dominating, 0,
                                informational=informational, closest_distance=report.closest_distance,
                                witnesses=report.witnesses))

        atoms = OutcomeSpace.from_distribution(v1_prior())
        finest = minimizer_check(stacked, atoms, Partition.finest(atoms), MINIMIZER_TRIALS, stream.child(len(cases)),
                                 self.threads)
        checks.append(check('minimizer_finest_partition', float(np.abs(finest.expected_divergence).max()),
                            IDENTITY_TOLERANCE, dominating=finest.dominating))

        squared = stacked_generator([scalar_generator('squared_norm')], 2, 2, 2)
        recovered = recover_minimizer(squared, atoms)
        mean = atoms.probs @ atoms.values
        checks.append(check('recovered_minimizer_is_prior_mean', float(np.abs(recovered - mean).max()), 1e-9,
                            recovered=recovered.tolist(), mean=mean.tolist()))
        return checks

    # Gradients

    def gradient_checks(self) -> List[Dict[str, Any]]:
        return (self._scalar_fd() + self._vector_fd() + self._dark_identity() + self._poisson_equivalence()
                + self._gaussian_equivalence() + self._corollaries() + self._mc_consistency())

    def _scalar_fd(self) -> List[Dict[str, Any]]:
        channel, prior = s1()
        theorem = grad_poisson(channel, prior, threads=self.threads)
        checks = []
        for target, value in ((FdTarget.phi_entry(0, 0), theorem.grad_phi[0, 0]),
                              (FdTarget.dark_entry(0), theorem.grad_dark[0])):
            fd = grad_fd(channel, prior, target, FD_STEP, FdScheme.CENTRAL)
            checks.append(check(f's1_theorem_vs_fd_{target.kind}', abs(value - fd) / abs(fd), SCALAR_FD_TOLERANCE,
                                theorem=float(value), finite_difference=fd))
        return checks

    def _vector_fd(self) -> List[Dict[str, Any]]:
        channel, prior = v1()
        theorem = grad_poisson(channel, prior, threads=self.threads)
        targets = [(FdTarget.phi_entry(i, j), theorem.grad_phi[i, j]) for i in range(2) for j in range(2)]
        targets += [(FdTarget.dark_entry(i), theorem.grad_dark[i]) for i in range(2)]
        worst = 0.0
        entries = []
        for target, value in targets:
            fd = grad_fd(channel, prior, target, FD_STEP, FdScheme.CENTRAL)
            relative = abs(value - fd) / abs(fd)
            worst = max(worst, relative)
            entries.append({"target": f'{target.kind}{list(target.index)}', "theorem": float(value),
                            "finite_difference": fd, "relative": relative})
        return [check('v1_theorem_vs_fd', worst, VECTOR_FD_TOLERANCE, entries=entries)]

    def _dark_identity(self) -> List[Dict[str, Any]]:
        checks = []
        for label, (channel, prior) in (('s1', s1()), ('v1', v1())):
            report = dark_gradient_identity(channel, prior)
            checks.append(check(f'{label}_dark_gradient_identity', report.max_abs_difference, report.tolerance,
                                report=report.to_dict()))
        return checks

    def _poisson_equivalence(self) -> List[Dict[str, Any]]:
        checks = []
        for label, (channel, prior) in (('s1', s1()), ('v1', v1())):
            report = poisson_bregman_gradient(channel, prior, threads=self.threads)
            checks.append(check(f'{label}_poisson_bregman_equals_gradient', report.max_abs_difference,
                                report.tolerance, report=report.to_dict()))
        return checks

    def _gaussian_equivalence(self) -> List[Dict[str, Any]]:
        channel, prior = v1_gaussian()
        report = gaussian_bregman_gradient(channel, prior, self.budget, self._stream(7), self.threads)
        fd = grad_gaussian_fd_matrix(channel, prior)
        gradient = report.gradient
        allowed = np.maximum(1e-3, 3.0 * gradient.error)
        ratio = float((np.abs(gradient.grad_phi - fd.grad_phi) / allowed).max())
        return [
            check('v1_gaussian_bregman_equals_gradient', report.max_abs_difference, report.tolerance,
                  samples=gradient.samples),
            check('v1_gaussian_gradient_vs_fd_quadrature', ratio, 1.0,
                  monte_carlo=gradient.to_dict(), finite_difference=fd.to_dict()),
        ]

    def _corollaries(self) -> List[Dict[str, Any]]:
        channel, prior = s1()
        return corollary_checks(float(channel.phi[0, 0]), float(channel.dark[0]), prior.atoms[:, 0], prior.probs)

    def _mc_consistency(self) -> List[Dict[str, Any]]:
        """Observed error against enumeration shrinks like 1/sqrt(budget); standard errors cover it."""
        channel, prior = v1()
        exact = grad_poisson(channel, prior, threads=self.threads).grad_phi
        stream = self._stream(8)
        runs = []
        for index, budget in enumerate(MC_BUDGETS):
            errors = []
            coverage = 0.0
            for replicate in range(MC_REPLICATES):
                report = grad_phi_poisson_mc(channel, prior, budget, stream.child(index).child(replicate),
                                             self.threads)
                error = np.abs(report.grad_phi - exact)
                errors.append(error)
                coverage = max(coverage, float((error / report.error).max()))
            runs.append({"budget": budget, "rms_error": float(np.sqrt(np.mean(np.square(errors)))),
                         "max_error": float(np.max(errors)), "max_error_in_se": coverage})

        scaling = 0.0
        for small, large in zip(runs, runs[1:]):
            observed = small["rms_error"] / large["rms_error"]
            expected = np.sqrt(large["budget"] / small["budget"])
            scaling = max(scaling, observed / expected, expected / observed)
        return [
            check('mc_gradient_error_scaling', scaling, 2.0, runs=runs, replicates=MC_REPLICATES),
            check('mc_gradient_within_5_standard_errors', max(r["max_error_in_se"] for r in runs), 5.0, runs=runs),
        ]

def run_suite(name: str, seed: int = 0, budget: int = DEFAULT_BUDGET, threads: Optional[int] = None) -> SuiteReport:
    return VerificationSuite(seed, budget, threads).run(name)
