"""
The conditional mean as minimizer of the expected generalized Bregman divergence.

Over a finite probability space, a sub-sigma-algebra is a partition of the
outcomes. E[X | cell] is compared against random cell-measurable alternatives;
no alternative may be strictly smaller in the cone order.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.optimize import minimize

from shared.config import settings
from shared.errors import NumericalError, ValidationError
from shared.numerics import Mat, RngStream, Vec, as_mat, as_vec, block_sizes, run_blocks
from infograd.generators.matrix import MatrixGenerator, bregman_generalized
from infograd.models.channels import PoissonChannel, build_output_grid, poisson_log_pmf_table
from infograd.models.input_model import FiniteDistribution

logger = logging.getLogger(__name__)

ALTERNATIVE_BLOCK = 256
DOMINANCE_TOLERANCE = 1e-12
_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class OutcomeSpace:
    """
    Finite probability space carrying the random vector X.

    Attributes:
        values: N x n, X at each outcome
        probs: N probabilities
        outputs: N x m channel outputs when the space is the joint (X, Y) law, else None
    """
    values: Mat
    probs: Vec
    outputs: Optional[np.ndarray] = None

    def __post_init__(self):
        values = as_mat(self.values, name='values')
        probs = as_vec(self.probs, name='probs')
        if values.shape[0] != probs.shape[0]:
            raise ValidationError(f"got {values.shape[0]} outcomes but {probs.shape[0]} probabilities")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValidationError("outcome probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'probs', probs)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_distribution(cls, d: FiniteDistribution) -> 'OutcomeSpace':
        return cls(np.array(d.atoms), np.array(d.probs))

    @classmethod
    def from_channel(cls, ch: PoissonChannel, d: FiniteDistribution, epsilon: float = 1e-12) -> 'OutcomeSpace':
        """Joint law of (X, Y) over the truncated output grid, renormalized to the enumerated mass."""
        grid = build_output_grid(ch, d, epsilon)
        cells = grid.cells()
        joint = d.probs[:, None] * np.exp(poisson_log_pmf_table(ch.rates(d.atoms), cells))
        keep = joint > 0
        atom_index, cell_index = np.nonzero(keep)
        probs = joint[keep]
        return cls(values=np.array(d.atoms)[atom_index], probs=probs / probs.sum(), outputs=cells[cell_index])


@dataclass(frozen=True, eq=False)
class Partition:
    """Cell label per outcome; labels run over 0..cells-1."""
    labels: np.ndarray
    cells: int
    name: str = 'custom'

    @classmethod
    def from_labels(cls, labels, name: str = 'custom') -> 'Partition':
        raw = np.asarray(labels)
        _, compact = np.unique(raw, return_inverse=True)
        return cls(compact.astype(np.int64), int(compact.max()) + 1 if compact.size else 0, name)

    @classmethod
    def trivial(cls, space: OutcomeSpace) -> 'Partition':
        return cls(np.zeros(space.size, dtype=np.int64), 1, 'trivial')

    @classmethod
    def finest(cls, space: OutcomeSpace) -> 'Partition':
        return cls(np.arange(space.size, dtype=np.int64), space.size, 'finest')

    @classmethod
    def by_output_parity(cls, space: OutcomeSpace, coordinate: int = 0) -> 'Partition':
        if space.outputs is None:
            raise ValidationError("output parity needs a joint (X, Y) outcome space; use OutcomeSpace.from_channel")
        if not 0 <= coordinate < space.outputs.shape[1]:
            raise ValidationError(f"output coordinate {coordinate} outside 0..{space.outputs.shape[1] - 1}")
        return cls.from_labels(space.outputs[:, coordinate] % 2, name=f'parity(y[{coordinate}])')

    def validate(self, space: OutcomeSpace) -> None:
        if self.labels.shape != (space.size,):
            raise ValidationError(f"partition has {self.labels.shape[0]} labels for {space.size} outcomes")
        mass = np.bincount(self.labels, weights=space.probs, minlength=self.cells)
        empty = np.flatnonzero(mass <= 0)
        if empty.size:
            raise ValidationError(f"partition cell {int(empty[0])} is empty or has zero probability")


def conditional_means(space: OutcomeSpace, partition: Partition) -> Mat:
    """E[X | cell] for every cell, shape cells x n."""
    partition.validate(space)
    mass = np.bincount(partition.labels, weights=space.probs, minlength=partition.cells)
    sums = np.zeros((partition.cells, space.dim))
    np.add.at(sums, partition.labels, space.probs[:, None] * space.values)
    return sums / mass[:, None]


def expected_divergence(g: MatrixGenerator, space: OutcomeSpace, estimates: np.ndarray) -> Mat:
    """E[D_F(X, estimate)] with estimates given per outcome (N x n) or batched (..., N, n)."""
    divergences = bregman_generalized(g, space.values, estimates)
    return np.einsum('i,...ijk->...jk', space.probs, divergences)


@dataclass
class MinimizerReport:
    generator: str
    partition: str
    trials: int
    conditional_mean: Mat
    expected_divergence: Mat
    dominating: int = 0
    closest_margin: Optional[Mat] = None
    closest_distance: float = float('inf')
    witnesses: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.dominating == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "generator": self.generator,
            "partition": self.partition,
            "trials": self.trials,
            "conditional_mean": self.conditional_mean.tolist(),
            "expected_divergence": self.expected_divergence.tolist(),
            "dominating": self.dominating,
            "closest_margin": None if self.closest_margin is None else self.closest_margin.tolist(),
            "closest_distance": self.closest_distance,
            "witnesses": self.witnesses,
            "passed": self.passed,
        }


def _alternatives(g: MatrixGenerator, centres: Mat, stream: RngStream, count: int) -> np.ndarray:
    """Half perturbations of the conditional means, half fresh draws from the domain."""
    cells, n = centres.shape
    spread = max(float(np.abs(centres).max()), 0.1)
    near = centres[None] + 0.3 * spread * stream.generator.standard_normal((count, cells, n))
    far = g.sample(stream, count * cells).reshape(count, cells, n)
    pick = stream.generator.uniform(size=(count, 1, 1)) < 0.5
    alternatives = np.where(pick, near, far)
    if g.domain in ('nonnegative', 'positive'):
        alternatives = np.abs(alternatives) + (1e-6 if g.domain == 'positive' else 0.0)
    elif g.domain == 'negative':
        alternatives = -np.abs(alternatives) - 1e-6
    return alternatives


def minimizer_check(g: MatrixGenerator, space: OutcomeSpace, partition: Partition, trials: int = 10000,
                    rng: Optional[RngStream] = None, threads: Optional[int] = None) -> MinimizerReport:
    """
    Randomized search for a cell-measurable estimate that beats E[X | cell].

    Args:
        g: Generator
        space: Finite probability space (values of X)
        partition: Cells of the sub-sigma-algebra
        trials: Number of random alternatives
        rng: Random stream, block b uses rng.child(b)
        threads: Worker count

    Returns:
        MinimizerReport counting alternatives that are <=_K-smaller and not equal;
        closest_margin is E[D(X, y')] - E[D(X, c*)] for the nearest alternative
    """
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    rng = rng or RngStream(0)
    order = g.order
    centres = conditional_means(space, partition)
    base = expected_divergence(g, space, centres[partition.labels])
    sizes = block_sizes(trials, ALTERNATIVE_BLOCK)

    def run(b: int):
        stream = rng.child(b)
        alternatives = _alternatives(g, centres, stream, sizes[b])
        values = expected_divergence(g, space, alternatives[:, partition.labels, :])
        margins = values - base
        scale = 1.0 + np.abs(values).max(axis=(-2, -1))
        # alternative dominates when base - value is in K and the two differ
        below = order.margins(-margins) >= -DOMINANCE_TOLERANCE * scale
        differs = np.abs(margins).max(axis=(-2, -1)) > DOMINANCE_TOLERANCE * scale
        hits = np.flatnonzero(below & differs)
        distance = np.sqrt(np.sum(margins ** 2, axis=(-2, -1)))
        nearest = int(np.argmin(distance))
        witnesses = [{"alternative": alternatives[i].tolist(), "margin": margins[i].tolist()} for i in hits[:5]]
        return int(hits.size), float(distance[nearest]), margins[nearest], witnesses

    parts = run_blocks(run, len(sizes), settings.resolve_threads(threads))
    report = MinimizerReport(generator=g.name, partition=partition.name, trials=trials,
                             conditional_mean=centres, expected_divergence=base)
    for hits, distance, margin, witnesses in parts:
        report.dominating += hits
        if distance < report.closest_distance:
            report.closest_distance = distance
            report.closest_margin = margin
        report.witnesses.extend(witnesses[:max(0, 5 - len(report.witnesses))])

    logger.info(f"Minimizer check {g.name}/{partition.name}: {report.dominating} of {trials} alternatives dominate")
    return report


def recover_minimizer(g: MatrixGenerator, space: OutcomeSpace, x0=None, step: float = 1e-4) -> Vec:
    """
    argmin_y trace E[D_F(X, y)] under the trivial sigma-algebra, by quasi-Newton search.

    The gradient in y is -trace E[D^2F(y)[e_l, X - y]], with the second
    derivative taken as a central difference of the Frechet derivative.
    """
    y0 = as_vec(space.probs @ space.values + 0.5 if x0 is None else x0, name='x0')
    bounded = g.domain != 'real'

    def objective(y):
        return float(np.trace(expected_divergence(g, space, np.broadcast_to(y, space.values.shape))))

    def gradient(y):
        residual = space.values - y
        grad = np.empty_like(y)
        for l in range(y.shape[0]):
            t = step * max(1.0, abs(y[l]))
            lo = y.copy()
            hi = y.copy()
            hi[l] += t
            lo[l] = max(y[l] - t, _FLOOR) if bounded else y[l] - t
            second = (g.frechet(np.broadcast_to(hi, residual.shape), residual)
                      - g.frechet(np.broadcast_to(lo, residual.shape), residual)) / (hi[l] - lo[l])
            grad[l] = -float(np.trace(np.einsum('i,ijk->jk', space.probs, second)))
        return grad

    if bounded:
        result = minimize(objective, y0, jac=gradient, method='L-BFGS-B', bounds=[(_FLOOR, None)] * y0.shape[0],
                          options={'gtol': 1e-13, 'ftol': 0.0, 'maxiter': 1000})
    else:
        result = minimize(objective, y0, jac=gradient, method='BFGS', options={'gtol': 1e-12, 'maxiter': 1000})
    if not np.all(np.isfinite(result.x)):
        raise NumericalError(f"minimizer search for {g.name} diverged: {result.message}")
    logger.debug(f"recover_minimizer: {result.message} after {result.nit} iterations")
    return np.asarray(result.x)
