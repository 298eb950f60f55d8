"""
Exact posteriors over prior atoms, conditional means and the MMSE matrix.

All posteriors are formed in log space with logsumexp; Poisson log-likelihoods
reach -700 quickly and direct exponentiation underflows.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Tuple, TypeVar

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.typing import NDArray
from scipy.special import logsumexp

from shared.config import settings
from shared.errors import FeasibilityError, ValidationError
from shared.numerics import Mat, RngStream, Vec, as_vec, block_sizes, run_blocks
from infograd.models.channels import GaussianChannel, PoissonChannel
from infograd.models.input_model import FiniteDistribution, sample_indices

logger = logging.getLogger(__name__)

T = TypeVar('T')

WEIGHT_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Posterior:
    """P(X = atom_k | Y = y) for one observed output."""
    weights: Vec

    def __post_init__(self):
        weights = as_vec(self.weights, name='posterior weights')
        if np.any(weights < 0):
            raise ValidationError("posterior weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > WEIGHT_TOLERANCE:
            raise ValidationError("posterior weights must sum to 1")
        object.__setattr__(self, 'weights', weights)


def posterior(d: FiniteDistribution, loglik: Callable[[Vec], float]) -> Posterior:
    """
    Bayes rule on the prior's atoms.

    Args:
        d: Prior over inputs
        loglik: log P(y | atom) for the observed y, as a function of the atom

    Returns:
        Posterior with weights proportional to probs[k] * exp(loglik(atom_k))
    """
    logliks = np.array([float(loglik(atom)) for atom in d.atoms])
    return posterior_from_logliks(d, logliks)


def posterior_from_logliks(d: FiniteDistribution, logliks: Any) -> Posterior:
    logliks = np.asarray(logliks, dtype=np.float64)
    if logliks.shape != (d.size,):
        raise ValidationError(f"expected {d.size} log-likelihoods, got shape {logliks.shape}")
    log_joint = d.log_probs + logliks
    if not np.any(np.isfinite(log_joint)):
        raise ValidationError("output outside channel support")
    weights = np.exp(log_joint - logsumexp(log_joint))
    return Posterior(weights)


def posterior_table(log_prior: Vec, loglik_table: NDArray[np.float64]) -> Tuple[NDArray[np.float64], Vec]:
    """
    Batched posteriors for many outputs.

    Args:
        log_prior: log probs, length K
        loglik_table: K x N table of log P(y_c | x_k)

    Returns:
        (weights N x K, log marginal log P(y_c) of length N); outputs with
        zero marginal get all-zero weights and -inf log marginal
    """
    log_joint = log_prior[:, None] + loglik_table
    with np.errstate(divide='ignore', invalid='ignore'):
        log_marginal = logsumexp(log_joint, axis=0)
        supported = np.isfinite(log_marginal)
        weights = np.where(supported[None, :], np.exp(log_joint - np.where(supported, log_marginal, 0.0)[None, :]), 0.0)
    return weights.T, log_marginal


def conditional_mean(d: FiniteDistribution, post: Posterior) -> Vec:
    return post.weights @ d.atoms


def conditional_rate(ch: PoissonChannel, d: FiniteDistribution, post: Posterior) -> Vec:
    """E[Phi X + dark | Y] = Phi E[X|Y] + dark."""
    return ch.rates(conditional_mean(d, post))


@dataclass(frozen=True)
class GaussianBlock:
    """One Monte Carlo block of the Gaussian channel: inputs, estimates and log-ratios."""
    x: NDArray[np.float64]
    x_hat: NDArray[np.float64]
    log_ratio: NDArray[np.float64]


def _gaussian_block(ch: GaussianChannel, d: FiniteDistribution, size: int, stream: RngStream) -> GaussianBlock:
    indices = sample_indices(d, stream, size)
    x = d.atoms[indices]
    noise = stream.generator.standard_normal((size, ch.m))
    y = ch.means(x) + noise

    # Gaussian constants cancel in both the posterior and the log-ratio
    centres = ch.means(d.atoms)
    loglik = -0.5 * np.sum((y[:, None, :] - centres[None, :, :]) ** 2, axis=2)
    weights, log_marginal = posterior_table(d.log_probs, loglik.T)
    log_ratio = loglik[np.arange(size), indices] - log_marginal
    return GaussianBlock(x=x, x_hat=weights @ d.atoms, log_ratio=log_ratio)


def map_gaussian_blocks(ch: GaussianChannel, d: FiniteDistribution, mc_samples: int, rng: RngStream,
                        reducer: Callable[[GaussianBlock], T], threads: Optional[int] = None,
                        block_size: Optional[int] = None) -> List[T]:
    """
    Draw (x, y) pairs block by block and apply reducer to each block.

    Block b always draws from rng.child(b), so every caller with the same stream
    sees the same samples.
    """
    ch.require_input(d)
    sizes = block_sizes(mc_samples, block_size or settings.mc_block_size)
    workers = settings.resolve_threads(threads)

    def run(b: int) -> T:
        return reducer(_gaussian_block(ch, d, sizes[b], rng.child(b)))

    return run_blocks(run, len(sizes), workers)


@dataclass(frozen=True)
class MmseEstimate:
    """Monte Carlo MMSE matrix with per-entry standard errors."""
    matrix: Mat
    std_error: Mat
    samples: int


def _outer_sums(block: GaussianBlock) -> Tuple[int, Mat, Mat]:
    err = block.x - block.x_hat
    outer = err[:, :, None] * err[:, None, :]
    return err.shape[0], outer.sum(axis=0), (outer ** 2).sum(axis=0)


def mmse_matrix(ch: GaussianChannel, d: FiniteDistribution, mc_samples: int, rng: RngStream,
                threads: Optional[int] = None) -> MmseEstimate:
    """
    Monte Carlo estimate of E[(X - E[X|Y])(X - E[X|Y])^T] with exact per-sample posteriors.

    Args:
        ch: Gaussian channel
        d: Prior over inputs
        mc_samples: Number of (x, y) pairs
        rng: Stream owning the samples; block b uses rng.child(b)
        threads: Worker count, defaults to INFOGRAD_THREADS

    Returns:
        Symmetrized estimate with per-entry standard errors
    """
    if mc_samples < 1:
        raise ValidationError(f"mc_samples must be >= 1, got {mc_samples}")

    parts = map_gaussian_blocks(ch, d, mc_samples, rng, _outer_sums, threads)

    count = 0
    total = np.zeros((d.dim, d.dim))
    total_sq = np.zeros((d.dim, d.dim))
    for size, block_sum, block_sq in parts:
        count += size
        total += block_sum
        total_sq += block_sq

    estimate = total / count
    if count > 1:
        variance = np.maximum(total_sq / count - estimate ** 2, 0.0) * count / (count - 1)
    else:
        variance = np.zeros_like(estimate)
    std_error = np.sqrt(variance / count)

    symmetric = 0.5 * (estimate + estimate.T)
    logger.info(f"MMSE matrix from {count} samples, max standard error {std_error.max():.3e}")
    return MmseEstimate(matrix=symmetric, std_error=0.5 * (std_error + std_error.T), samples=count)


def hermite_nodes(order: int, dim: int) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Tensor Gauss-Hermite nodes and weights for expectations under N(0, I_dim)."""
    points, weights = hermgauss(order)
    nodes = np.array(list(itertools.product(*(points,) * dim))) * np.sqrt(2.0)
    node_weights = np.prod(np.array(list(itertools.product(*(weights,) * dim))), axis=1) / np.pi ** (dim / 2.0)
    return nodes, node_weights


def mmse_matrix_quadrature(ch: GaussianChannel, d: FiniteDistribution, order: int = 40) -> Mat:
    """MMSE matrix by Gauss-Hermite quadrature around each atom; m <= 2 only."""
    if ch.m > 2:
        raise FeasibilityError(f"quadrature needs m <= 2, channel has m = {ch.m}; use Monte Carlo")
    ch.require_input(d)

    nodes, node_weights = hermite_nodes(order, ch.m)
    centres = ch.means(d.atoms)
    result = np.zeros((d.dim, d.dim))
    for k in range(d.size):
        if d.probs[k] == 0:
            continue
        y = centres[k][None, :] + nodes
        loglik = -0.5 * np.sum((y[:, None, :] - centres[None, :, :]) ** 2, axis=2)
        weights, _ = posterior_table(d.log_probs, loglik.T)
        err = d.atoms[k][None, :] - weights @ d.atoms
        result += d.probs[k] * np.einsum('q,qi,qj->ij', node_weights, err, err)
    return 0.5 * (result + result.T)
