"""
Gradients of I(X;Y) with respect to the scaling matrix and the dark current.

Poisson channel, entry (i, j) of the scaling-matrix gradient:

    E[X_j log((Phi X)_i + dark_i)] - E[E[X_j|Y] log E[(Phi X)_i + dark_i | Y]]

and entry i of the dark-current gradient drops the X_j factors. Gaussian
channel: grad_Phi I = Phi E with E the MMSE matrix.

Every formula has a second evaluation path (Monte Carlo, finite differences of
the MI estimators) so the verification harness never checks code against itself.
"""

import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.stats import poisson

from shared.config import settings
from shared.errors import FeasibilityError, NumericalError, ValidationError
from shared.numerics import (
    Mat,
    RngStream,
    Vec,
    as_vec,
    block_sizes,
    default_step,
    finite_difference_scalar,
    forward_difference_richardson,
    mat_to_csv,
    run_blocks,
)
from infograd.estimators.inference import mmse_matrix, posterior_table
from infograd.estimators.information import (
    DEFAULT_EPSILON,
    DEFAULT_QUADRATURE_ORDER,
    _gaussian_quadrature_value,
    _slab_starts,
    mi_poisson_enum,
)
from infograd.models.channels import (
    Channel,
    GaussianChannel,
    OutputGrid,
    PoissonChannel,
    build_output_grid,
    grid_for_channels,
    poisson_log_pmf_table,
)
from infograd.models.input_model import FiniteDistribution, sample_indices

logger = logging.getLogger(__name__)


class GradientMethod(str, Enum):
    THEOREM = 'theorem'
    FINITE_DIFFERENCE = 'finite_difference'
    MONTE_CARLO = 'monte_carlo'
    GAUSSIAN_MMSE = 'gaussian_mmse'

    @classmethod
    def parse(cls, value: str) -> 'GradientMethod':
        aliases = {'fd': cls.FINITE_DIFFERENCE, 'mc': cls.MONTE_CARLO}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown gradient method {value!r}; use theorem, fd or mc")


@dataclass(frozen=True, eq=False)
class GradientReport:
    """
    Gradient of I(X;Y) with per-entry error estimates.

    Attributes:
        grad_phi: m x n, entry (i, j) = dI/dPhi_ij (None when only dark was asked for)
        grad_dark: length m, entry i = dI/d dark_i (Poisson only)
        method: evaluation path
        channel_kind: 'poisson' or 'gaussian'
        error: per-entry bound (theorem, finite differences) or standard error (Monte Carlo)
        dark_error: same for grad_dark
        deficit: grid mass outside the enumeration, 0 for sampling methods
        samples: Monte Carlo sample count, 0 otherwise
    """
    grad_phi: Optional[Mat]
    grad_dark: Optional[Vec]
    method: GradientMethod
    channel_kind: str
    error: Optional[Mat] = None
    dark_error: Optional[Vec] = None
    deficit: float = 0.0
    samples: int = 0

    def __post_init__(self):
        for name in ('grad_phi', 'grad_dark', 'error', 'dark_error'):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.array(value, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.grad_phi is not None and self.error is not None and self.error.shape != self.grad_phi.shape:
            raise ValidationError("error estimate shape does not match grad_phi")

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            "method": self.method.value,
            "channel": self.channel_kind,
            "deficit": self.deficit,
            "samples": self.samples,
        }
        if self.grad_phi is not None:
            result["grad_phi"] = mat_to_csv(self.grad_phi)
            result["error"] = mat_to_csv(self.error) if self.error is not None else None
        if self.grad_dark is not None:
            result["grad_dark"] = mat_to_csv(self.grad_dark)
            result["dark_error"] = mat_to_csv(self.dark_error) if self.dark_error is not None else None
        return result


@dataclass(frozen=True)
class PoissonTerms:
    """The two expectations of each gradient entry, kept apart for auditing."""
    phi_prior: Mat
    phi_posterior: Mat
    dark_prior: Vec
    dark_posterior: Vec
    grid_mass: float


def _prior_terms(ch: PoissonChannel, d: FiniteDistribution) -> Tuple[Mat, Vec]:
    log_rates = np.log(ch.rates(d.atoms))
    phi_prior = (d.probs[:, None] * log_rates).T @ d.atoms
    return phi_prior, d.probs @ log_rates


def poisson_theorem_terms(ch: PoissonChannel, d: FiniteDistribution, grid: OutputGrid,
                          threads: Optional[int] = None, slab_cells: Optional[int] = None) -> PoissonTerms:
    """
    Both expectations of the Poisson gradient formula.

    The prior expectations are exact sums over atoms. The posterior
    expectations run over the grid and are normalised by the enumerated mass.
    """
    ch.require_positive_dark()
    rates = ch.rates(d.atoms)
    log_prior = d.log_probs
    starts, step = _slab_starts(grid.size, slab_cells)

    def run(index: int) -> Tuple[Mat, Vec, float]:
        cells = grid.cells(starts[index], starts[index] + step)
        weights, log_py = posterior_table(log_prior, poisson_log_pmf_table(rates, cells))
        live = np.isfinite(log_py)
        py = np.exp(log_py[live])
        x_hat = weights[live] @ d.atoms
        log_rate_hat = np.log(weights[live] @ rates)
        return (py[:, None] * log_rate_hat).T @ x_hat, py @ log_rate_hat, math.fsum(py.tolist())

    parts = run_blocks(run, len(starts), settings.resolve_threads(threads))
    mass = math.fsum(p[2] for p in parts)
    phi_posterior = np.zeros((ch.m, ch.n))
    dark_posterior = np.zeros(ch.m)
    for block_phi, block_dark, _ in parts:
        phi_posterior += block_phi
        dark_posterior += block_dark

    phi_prior, dark_prior = _prior_terms(ch, d)
    return PoissonTerms(phi_prior=phi_prior, phi_posterior=phi_posterior / mass,
                        dark_prior=dark_prior, dark_posterior=dark_posterior / mass, grid_mass=mass)


def _truncation_bounds(ch: PoissonChannel, d: FiniteDistribution, deficit: float) -> Tuple[Mat, Vec]:
    rates = ch.rates(d.atoms)
    log_scale = np.maximum(np.abs(np.log(ch.dark)), np.abs(np.log(rates.max(axis=0))))
    atom_scale = np.abs(d.atoms).max(axis=0)
    return deficit * np.outer(log_scale, atom_scale), deficit * log_scale


def grad_poisson(ch: PoissonChannel, d: FiniteDistribution, epsilon: float = DEFAULT_EPSILON,
                 grid: Optional[OutputGrid] = None, threads: Optional[int] = None) -> GradientReport:
    """
    Scaling-matrix and dark-current gradients from one enumeration pass.

    Args:
        ch: Poisson channel with positive dark current
        d: Prior over inputs
        epsilon: Truncation mass of the output grid
        grid: Fixed grid, built from epsilon when omitted
        threads: Worker count for grid slabs

    Returns:
        GradientReport with truncation-plus-rounding bounds per entry
    """
    ch.require_input(d)
    ch.require_positive_dark()
    if grid is None:
        grid = build_output_grid(ch, d, epsilon)

    terms = poisson_theorem_terms(ch, d, grid, threads)
    grad_phi = terms.phi_prior - terms.phi_posterior
    grad_dark = terms.dark_prior - terms.dark_posterior

    phi_bound, dark_bound = _truncation_bounds(ch, d, grid.deficit)
    eps = np.finfo(np.float64).eps
    error = phi_bound + 8 * eps * (np.abs(terms.phi_prior) + np.abs(terms.phi_posterior))
    dark_error = dark_bound + 8 * eps * (np.abs(terms.dark_prior) + np.abs(terms.dark_posterior))

    logger.info(f"Enumerated gradient over {grid.size} cells, max entry bound {error.max():.2e}")
    return GradientReport(grad_phi=grad_phi, grad_dark=grad_dark, method=GradientMethod.THEOREM,
                          channel_kind='poisson', error=error, dark_error=dark_error, deficit=grid.deficit)


def grad_phi_poisson(ch: PoissonChannel, d: FiniteDistribution, epsilon: float = DEFAULT_EPSILON,
                     threads: Optional[int] = None) -> GradientReport:
    report = grad_poisson(ch, d, epsilon, threads=threads)
    return GradientReport(grad_phi=report.grad_phi, grad_dark=None, method=report.method,
                          channel_kind='poisson', error=report.error, deficit=report.deficit)


def grad_dark_poisson(ch: PoissonChannel, d: FiniteDistribution, epsilon: float = DEFAULT_EPSILON,
                      threads: Optional[int] = None) -> GradientReport:
    report = grad_poisson(ch, d, epsilon, threads=threads)
    return GradientReport(grad_phi=None, grad_dark=report.grad_dark, method=report.method,
                          channel_kind='poisson', dark_error=report.dark_error, deficit=report.deficit)


def _standard_errors(count: int, total: np.ndarray, total_sq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = total / count
    if count < 2:
        return mean, np.zeros_like(mean)
    variance = np.maximum(total_sq / count - mean ** 2, 0.0) * count / (count - 1)
    return mean, np.sqrt(variance / count)


def grad_phi_poisson_mc(ch: PoissonChannel, d: FiniteDistribution, budget: int, rng: RngStream,
                        threads: Optional[int] = None) -> GradientReport:
    """
    Monte Carlo evaluation of the Poisson gradient formula.

    Each sample contributes x_j log r_i - E[X_j|y] log E[r_i|y] with exact
    posteriors, so a deterministic prior cancels sample by sample.
    """
    ch.require_input(d)
    ch.require_positive_dark()
    sizes = block_sizes(budget, settings.mc_block_size)
    rates = ch.rates(d.atoms)
    log_prior = d.log_probs

    def run(b: int) -> Tuple[int, Mat, Mat, Vec, Vec]:
        stream = rng.child(b)
        indices = sample_indices(d, stream, sizes[b])
        outputs = stream.generator.poisson(rates[indices])
        weights, _ = posterior_table(log_prior, poisson_log_pmf_table(rates, outputs))
        x = d.atoms[indices]
        log_rate = np.log(rates[indices])
        x_hat = weights @ d.atoms
        log_rate_hat = np.log(weights @ rates)
        phi_terms = log_rate[:, :, None] * x[:, None, :] - log_rate_hat[:, :, None] * x_hat[:, None, :]
        dark_terms = log_rate - log_rate_hat
        return (sizes[b], phi_terms.sum(axis=0), (phi_terms ** 2).sum(axis=0),
                dark_terms.sum(axis=0), (dark_terms ** 2).sum(axis=0))

    parts = run_blocks(run, len(sizes), settings.resolve_threads(threads))
    count = sum(p[0] for p in parts)
    grad_phi, error = _standard_errors(count, sum(p[1] for p in parts), sum(p[2] for p in parts))
    grad_dark, dark_error = _standard_errors(count, sum(p[3] for p in parts), sum(p[4] for p in parts))

    logger.info(f"Monte Carlo gradient from {count} samples, max standard error {error.max():.2e}")
    return GradientReport(grad_phi=grad_phi, grad_dark=grad_dark, method=GradientMethod.MONTE_CARLO,
                          channel_kind='poisson', error=error, dark_error=dark_error, samples=count)


def grad_phi_gaussian(ch: GaussianChannel, d: FiniteDistribution, mc_samples: int, rng: RngStream,
                      threads: Optional[int] = None) -> GradientReport:
    """Phi times the Monte Carlo MMSE matrix; standard errors propagate as sqrt(Phi^2 SE^2)."""
    estimate = mmse_matrix(ch, d, mc_samples, rng, threads)
    grad_phi = ch.phi @ estimate.matrix
    error = np.sqrt((ch.phi ** 2) @ (estimate.std_error ** 2))
    return GradientReport(grad_phi=grad_phi, grad_dark=None, method=GradientMethod.GAUSSIAN_MMSE,
                          channel_kind='gaussian', error=error, samples=estimate.samples)


@dataclass(frozen=True)
class FdTarget:
    """One channel parameter: kind 'phi' with index (i, j) or kind 'dark' with index (i,)."""
    kind: str
    index: Tuple[int, ...]

    @classmethod
    def phi_entry(cls, i: int, j: int) -> 'FdTarget':
        return cls('phi', (int(i), int(j)))

    @classmethod
    def dark_entry(cls, i: int) -> 'FdTarget':
        return cls('dark', (int(i),))

    @classmethod
    def parse(cls, text: str) -> 'FdTarget':
        """'phi:i,j' or 'dark:i' (0-based)."""
        kind, _, rest = text.partition(':')
        try:
            index = tuple(int(part) for part in rest.split(',')) if rest else ()
        except ValueError:
            raise ValidationError(f"bad finite-difference target {text!r}; use phi:i,j or dark:i")
        if (kind, len(index)) not in (('phi', 2), ('dark', 1)):
            raise ValidationError(f"bad finite-difference target {text!r}; use phi:i,j or dark:i")
        return cls(kind, index)

    def value(self, ch: Channel) -> float:
        if self.kind == 'phi':
            return float(ch.phi[self.index])
        if isinstance(ch, GaussianChannel):
            raise ValidationError("the Gaussian channel has no dark current")
        return float(ch.dark[self.index])

    def check(self, ch: Channel) -> None:
        shape = ch.phi.shape if self.kind == 'phi' else (ch.m,)
        if any(not 0 <= i < s for i, s in zip(self.index, shape)):
            raise ValidationError(f"{self.kind} index {self.index} outside shape {shape}")


class FdScheme(str, Enum):
    AUTO = 'auto'
    CENTRAL = 'central'
    FORWARD = 'forward'


def _resolve_scheme(ch: Channel, target: FdTarget, x0: float, h: float, scheme: FdScheme) -> FdScheme:
    constrained = isinstance(ch, PoissonChannel)
    if scheme is FdScheme.AUTO:
        return FdScheme.FORWARD if constrained and x0 < 2 * h else FdScheme.CENTRAL
    if scheme is FdScheme.CENTRAL and constrained and x0 - h < 0:
        raise ValidationError(
            f"central difference leaves the domain at {target.kind}{list(target.index)} = {x0!r} "
            f"with h = {h!r}; use a smaller h or the forward scheme")
    return scheme


def _probe_points(x0: float, h: float, scheme: FdScheme) -> List[float]:
    if scheme is FdScheme.CENTRAL:
        return [x0 - h, x0 + h]
    return [x0, x0 + 0.5 * h, x0 + h]


def grad_fd(ch: Channel, d: FiniteDistribution, target: FdTarget, h: Optional[float] = None,
            scheme: Union[FdScheme, str] = FdScheme.AUTO, epsilon: float = DEFAULT_EPSILON,
            order: int = DEFAULT_QUADRATURE_ORDER, errors: Optional[List[float]] = None) -> float:
    """
    Finite-difference derivative of I(X;Y) in one channel parameter.

    Poisson MI is enumerated on one grid shared by every probe point; Gaussian MI
    uses tensor quadrature of a fixed order (m <= 2).

    Args:
        ch: Channel
        d: Prior over inputs
        target: Parameter to perturb
        h: Step, defaults to 1e-4 * max(1, |x0|)
        scheme: auto (central, or forward Richardson near a zero bound), central or forward
        epsilon: Grid truncation mass (Poisson)
        order: Quadrature nodes per dimension (Gaussian)
        errors: If given, receives the MI error bound of every probe

    Returns:
        The derivative estimate
    """
    ch.require_input(d)
    target.check(ch)
    x0 = target.value(ch)
    if h is None:
        h = default_step(x0)
    if not h > 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")
    scheme = _resolve_scheme(ch, target, x0, h, FdScheme(scheme))

    if isinstance(ch, PoissonChannel):
        probes = tuple(ch.with_entry(target.kind, target.index, x) for x in _probe_points(x0, h, scheme))
        grid = grid_for_channels(probes, d, epsilon)

        def mi(x: float) -> float:
            estimate = mi_poisson_enum(ch.with_entry(target.kind, target.index, x), d, grid=grid)
            if errors is not None:
                errors.append(estimate.error_bound)
            return estimate.value
    else:
        if ch.m > 2:
            raise FeasibilityError(f"quadrature MI needs m <= 2, channel has m = {ch.m}; use --method mc")

        def mi(x: float) -> float:
            perturbed = ch.with_entry(target.kind, target.index, x)
            if d.is_deterministic:
                return 0.0
            return _gaussian_quadrature_value(perturbed, d, order)

    if scheme is FdScheme.CENTRAL:
        return finite_difference_scalar(mi, x0, h)
    return forward_difference_richardson(mi, x0, h)


def grad_fd_matrix(ch: Channel, d: FiniteDistribution, wrt: str = 'phi', h: Optional[float] = None,
                   scheme: Union[FdScheme, str] = FdScheme.AUTO, epsilon: float = DEFAULT_EPSILON,
                   order: int = DEFAULT_QUADRATURE_ORDER) -> GradientReport:
    """Finite-difference gradient for every phi entry (wrt='phi') or every dark entry (wrt='dark')."""
    if wrt == 'phi':
        targets = [FdTarget.phi_entry(i, j) for i in range(ch.m) for j in range(ch.n)]
    elif wrt == 'dark':
        if isinstance(ch, GaussianChannel):
            raise ValidationError("the Gaussian channel has no dark current")
        targets = [FdTarget.dark_entry(i) for i in range(ch.m)]
    else:
        raise ValidationError(f"wrt must be 'phi' or 'dark', got {wrt!r}")

    values = []
    bounds = []
    for target in targets:
        probe_errors: List[float] = []
        step = h if h is not None else default_step(target.value(ch))
        values.append(grad_fd(ch, d, target, step, scheme, epsilon, order, errors=probe_errors))
        bounds.append(2.0 * max(probe_errors, default=0.0) / step)

    if wrt == 'phi':
        return GradientReport(grad_phi=np.reshape(values, ch.phi.shape), grad_dark=None,
                              method=GradientMethod.FINITE_DIFFERENCE, channel_kind=ch.kind,
                              error=np.reshape(bounds, ch.phi.shape))
    return GradientReport(grad_phi=None, grad_dark=np.array(values), method=GradientMethod.FINITE_DIFFERENCE,
                          channel_kind=ch.kind, dark_error=np.array(bounds))


def grad_gaussian_fd_matrix(ch: GaussianChannel, d: FiniteDistribution, h: Optional[float] = None,
                            order: int = DEFAULT_QUADRATURE_ORDER) -> GradientReport:
    return grad_fd_matrix(ch, d, 'phi', h, FdScheme.CENTRAL, order=order)


def scalar_poisson_derivatives(phi: float, dark: float, values: Any, probs: Any,
                               epsilon: float = DEFAULT_EPSILON) -> Tuple[float, float]:
    """
    dI/dphi and dI/d dark of the scalar Poisson channel Y ~ Pois(phi X + dark).

    Plain loops with the math module; the output range {0..B} comes straight
    from the Poisson tail of the largest rate, not from build_output_grid.

    Returns:
        (E[X log(phi X + dark)] - E[E[X|Y] log(phi E[X|Y] + dark)],
         E[log(phi X + dark)] - E[log(phi E[X|Y] + dark)])
    """
    if dark <= 0:
        raise ValidationError(f"dark current must be positive for gradient (dark[0] = {dark!r})")
    values = [float(v) for v in as_vec(values, name='values')]
    probs = [float(p) for p in as_vec(probs, name='probs')]
    # validation only
    FiniteDistribution(np.array(values), np.array(probs))

    rates = [phi * x + dark for x in values]
    top = max(rates)
    bound = max(int(poisson.isf(epsilon, top)), 0)
    while poisson.sf(bound, top) > epsilon:
        bound += 1
    live = [k for k in range(len(values)) if probs[k] > 0]

    prior_phi = 0.0
    prior_dark = 0.0
    for k in live:
        prior_phi += probs[k] * values[k] * math.log(rates[k])
        prior_dark += probs[k] * math.log(rates[k])

    post_phi = 0.0
    post_dark = 0.0
    mass = 0.0
    for y in range(bound + 1):
        log_joint = [math.log(probs[k]) + y * math.log(rates[k]) - rates[k] - math.lgamma(y + 1.0) for k in live]
        top = max(log_joint)
        log_py = top + math.log(math.fsum(math.exp(v - top) for v in log_joint))
        py = math.exp(log_py)
        x_hat = math.fsum(math.exp(v - log_py) * values[k] for v, k in zip(log_joint, live))
        log_rate_hat = math.log(phi * x_hat + dark)
        post_phi += py * x_hat * log_rate_hat
        post_dark += py * log_rate_hat
        mass += py

    return prior_phi - post_phi / mass, prior_dark - post_dark / mass
