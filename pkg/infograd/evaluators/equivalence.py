"""
Gradient of mutual information as an expected generalized Bregman divergence.

Poisson: E[D_F(X, E[X|Y])] with F(x) = x log(Phi x + dark)^T - [x..x] + 1,
enumerated over (atom, output cell) pairs. The generator is n x m, so the
result is transposed before it is compared with the m x n gradient.

Gaussian: E[D_F(X, E[X|Y])] with F(x) = Phi x x^T on the same Monte Carlo
samples that produce the MMSE matrix.

Dark current: grad_dark_i = E[log r_i] - E[log E[r_i|Y]], both terms recomputed
cell by cell.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from shared.config import settings
from shared.numerics import Mat, RngStream, Vec, mat_to_csv, run_blocks
from infograd.estimators.gradients import (
    GradientReport,
    PoissonTerms,
    grad_phi_gaussian,
    grad_poisson,
    poisson_theorem_terms,
    scalar_poisson_derivatives,
)
from infograd.estimators.inference import (
    GaussianBlock,
    conditional_rate,
    hermite_nodes,
    map_gaussian_blocks,
    mmse_matrix_quadrature,
    posterior_from_logliks,
    posterior_table,
)
from infograd.estimators.information import DEFAULT_EPSILON, _slab_starts
from infograd.generators.matrix import bregman_generalized, gaussian_generator, poisson_generator
from infograd.generators.scalar import bregman_scalar, scalar_gaussian_generator, scalar_poisson_generator
from infograd.models.channels import (
    GaussianChannel,
    PoissonChannel,
    build_output_grid,
    poisson_log_pmf,
    poisson_log_pmf_table,
)
from infograd.models.input_model import FiniteDistribution

logger = logging.getLogger(__name__)

POISSON_TOLERANCE = 1e-8
SAMPLE_IDENTITY_TOLERANCE = 1e-10
SCALAR_TOLERANCE = 1e-12
DARK_IDENTITY_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    """
    Expected divergence next to the gradient it should equal.

    Attributes:
        expected_divergence: E[D_F(X, E[X|Y])] in gradient orientation (m x n)
        gradient: the gradient computed by the gradients module
        max_abs_difference: largest entrywise |expected_divergence - gradient|
        tolerance: agreement threshold for this channel
    """
    channel_kind: str
    expected_divergence: Mat
    gradient: GradientReport
    max_abs_difference: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_difference <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "channel": self.channel_kind,
            "expected_divergence": mat_to_csv(self.expected_divergence),
            "gradient": self.gradient.to_dict(),
            "max_abs_difference": self.max_abs_difference,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def poisson_bregman_gradient(ch: PoissonChannel, d: FiniteDistribution, epsilon: float = DEFAULT_EPSILON,
                             threads: Optional[int] = None) -> EquivalenceReport:
    """Enumerate E[D_F(X, E[X|Y])] for the Poisson generator and compare with the gradient."""
    ch.require_input(d)
    ch.require_positive_dark()
    grid = build_output_grid(ch, d, epsilon)
    generator = poisson_generator(ch.phi, ch.dark)
    rates = ch.rates(d.atoms)
    log_prior = d.log_probs
    # one slab holds cells x atoms x n x m divergences
    starts, step = _slab_starts(grid.size, max(1, settings.slab_cells // (d.size * ch.n * ch.m)))

    def run(index: int):
        cells = grid.cells(starts[index], starts[index] + step)
        table = poisson_log_pmf_table(rates, cells)
        weights, log_py = posterior_table(log_prior, table)
        live = np.isfinite(log_py)
        joint = d.probs[:, None] * np.exp(table[:, live])
        x_hat = weights[live] @ d.atoms
        divergences = bregman_generalized(generator, d.atoms[:, None, :], x_hat[None, :, :])
        return np.einsum('kc,kcij->ij', joint, divergences), float(joint.sum())

    parts = run_blocks(run, len(starts), settings.resolve_threads(threads))
    mass = sum(p[1] for p in parts)
    total = np.zeros((ch.n, ch.m))
    for block, _ in parts:
        total += block
    expected = (total / mass).T

    gradient = grad_poisson(ch, d, epsilon, grid=grid, threads=threads)
    difference = float(np.abs(expected - gradient.grad_phi).max())
    logger.info(f"Poisson Bregman representation differs from the gradient by {difference:.2e}")
    return EquivalenceReport(channel_kind='poisson', expected_divergence=expected, gradient=gradient,
                             max_abs_difference=difference, tolerance=POISSON_TOLERANCE)


def gaussian_bregman_gradient(ch: GaussianChannel, d: FiniteDistribution, mc_samples: int, rng: RngStream,
                              threads: Optional[int] = None) -> EquivalenceReport:
    """
    Average D_F(x, E[X|y]) for F(x) = Phi x x^T over the samples behind Phi E.

    Both sides see identical samples, so they agree to rounding error.
    """
    generator = gaussian_generator(ch.phi)

    def reducer(block: GaussianBlock):
        divergences = bregman_generalized(generator, block.x, block.x_hat)
        return block.x.shape[0], divergences.sum(axis=0)

    parts = map_gaussian_blocks(ch, d, mc_samples, rng, reducer, threads)
    count = sum(p[0] for p in parts)
    total = np.zeros((ch.m, ch.n))
    for _, block_sum in parts:
        total += block_sum
    expected = total / count

    gradient = grad_phi_gaussian(ch, d, mc_samples, rng, threads)
    difference = float(np.abs(expected - gradient.grad_phi).max())
    return EquivalenceReport(channel_kind='gaussian', expected_divergence=expected, gradient=gradient,
                             max_abs_difference=difference, tolerance=SAMPLE_IDENTITY_TOLERANCE)


@dataclass(frozen=True, eq=False)
class DarkIdentityReport:
    """
    The dark-current gradient split into E[log r_i] and E[log E[r_i|Y]].

    Attributes:
        log_rate: E[log r_i], recomputed cell by cell
        log_conditional_rate: E[log E[r_i|Y]], recomputed cell by cell
        terms: the two expectations as grad_poisson forms them
        gradient: grad_dark from grad_poisson on the same grid
        max_abs_difference: worst disagreement over both terms and their difference
    """
    log_rate: Vec
    log_conditional_rate: Vec
    terms: PoissonTerms
    gradient: Vec
    max_abs_difference: float
    tolerance: float = DARK_IDENTITY_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_abs_difference <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "log_rate": self.log_rate.tolist(),
            "log_conditional_rate": self.log_conditional_rate.tolist(),
            "grad_dark": self.gradient.tolist(),
            "max_abs_difference": self.max_abs_difference,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def dark_gradient_identity(ch: PoissonChannel, d: FiniteDistribution,
                           epsilon: float = DEFAULT_EPSILON) -> DarkIdentityReport:
    """
    Check grad_dark_i = E[log r_i] - E[log E[r_i|Y]] one output cell at a time.

    Each cell gets its own posterior from poisson_log_pmf, and both
    expectations are averaged over the grid with the tower rule, so neither
    term reuses the batched tables behind grad_poisson.
    """
    ch.require_input(d)
    ch.require_positive_dark()
    grid = build_output_grid(ch, d, epsilon)
    log_rates = np.log(ch.rates(d.atoms))

    masses = []
    log_rate_terms = []
    conditional_terms = []
    for y in grid.cells():
        logliks = np.array([poisson_log_pmf(ch, atom, y) for atom in d.atoms])
        py = float(d.probs @ np.exp(logliks))
        if py == 0.0:
            continue
        post = posterior_from_logliks(d, logliks)
        masses.append(py)
        log_rate_terms.append(py * (post.weights @ log_rates))
        conditional_terms.append(py * np.log(conditional_rate(ch, d, post)))

    mass = math.fsum(masses)
    log_rate = np.array([math.fsum(column) for column in zip(*log_rate_terms)]) / mass
    log_conditional_rate = np.array([math.fsum(column) for column in zip(*conditional_terms)]) / mass

    terms = poisson_theorem_terms(ch, d, grid)
    gradient = grad_poisson(ch, d, epsilon, grid=grid).grad_dark
    difference = max(float(np.abs(log_rate - terms.dark_prior).max()),
                     float(np.abs(log_conditional_rate - terms.dark_posterior).max()),
                     float(np.abs(log_rate - log_conditional_rate - gradient).max()))
    logger.info(f"Dark-current gradient identity holds to {difference:.2e} over {grid.size} cells")
    return DarkIdentityReport(log_rate=log_rate, log_conditional_rate=log_conditional_rate, terms=terms,
                              gradient=gradient, max_abs_difference=difference)


def _check(name: str, metric: float, tolerance: float, **witness: Any) -> Dict[str, Any]:
    return {"name": name, "passed": bool(metric <= tolerance), "metric": metric, "tolerance": tolerance,
            "witness": witness, "informational": False}


def corollary_checks(phi: float, dark: float, values, probs, epsilon: float = DEFAULT_EPSILON,
                     order: int = 40) -> List[Dict[str, Any]]:
    """
    Scalar channel reductions checked against the vector code at m = n = 1.

    Poisson: the scalar derivative loop, the vector gradient and E[D_F(X, E[X|Y])]
    with f(x) = x log(phi x + dark) - x + 1. Gaussian: phi E[(X - E[X|Y])^2] from
    the vector MMSE quadrature against E[D_F] with f(x) = phi x^2 on the same nodes.
    """
    d = FiniteDistribution(np.asarray(values, dtype=np.float64), np.asarray(probs, dtype=np.float64))
    poisson = PoissonChannel([[phi]], [dark])
    vector = grad_poisson(poisson, d, epsilon)
    scalar_phi, scalar_dark = scalar_poisson_derivatives(phi, dark, values, probs, epsilon)

    checks = [
        _check('scalar_poisson_phi_matches_vector', abs(scalar_phi - float(vector.grad_phi[0, 0])), SCALAR_TOLERANCE,
               scalar=scalar_phi, vector=float(vector.grad_phi[0, 0])),
        _check('scalar_poisson_dark_matches_vector', abs(scalar_dark - float(vector.grad_dark[0])), SCALAR_TOLERANCE,
               scalar=scalar_dark, vector=float(vector.grad_dark[0])),
    ]

    generator = scalar_poisson_generator(phi, dark)
    grid = build_output_grid(poisson, d, epsilon)
    cells = grid.cells()
    table = poisson_log_pmf_table(poisson.rates(d.atoms), cells)
    weights, log_py = posterior_table(d.log_probs, table)
    expected = 0.0
    mass = 0.0
    for c in np.flatnonzero(np.isfinite(log_py)):
        x_hat = float(weights[c] @ d.atoms[:, 0])
        for k in range(d.size):
            if d.probs[k] == 0:
                continue
            joint = float(d.probs[k] * np.exp(table[k, c]))
            expected += joint * bregman_scalar(generator, [d.atoms[k, 0]], [x_hat])
            mass += joint
    expected /= mass
    checks.append(_check('scalar_poisson_bregman_matches_derivative', abs(expected - scalar_phi), POISSON_TOLERANCE,
                         bregman=expected, derivative=scalar_phi))

    gaussian = GaussianChannel([[phi]])
    vector_gradient = float((gaussian.phi @ mmse_matrix_quadrature(gaussian, d, order))[0, 0])
    quadratic = scalar_gaussian_generator(phi)
    nodes, node_weights = hermite_nodes(order, 1)
    centres = gaussian.means(d.atoms)
    expected = 0.0
    for k in range(d.size):
        if d.probs[k] == 0:
            continue
        y = centres[k][None, :] + nodes
        loglik = -0.5 * np.sum((y[:, None, :] - centres[None, :, :]) ** 2, axis=2)
        post, _ = posterior_table(d.log_probs, loglik.T)
        x_hat = post @ d.atoms[:, 0]
        for q in range(nodes.shape[0]):
            expected += d.probs[k] * node_weights[q] * bregman_scalar(quadratic, [d.atoms[k, 0]], [x_hat[q]])
    checks.append(_check('scalar_gaussian_bregman_matches_vector', abs(expected - vector_gradient), SCALAR_TOLERANCE,
                         bregman=expected, vector=vector_gradient))
    return checks
