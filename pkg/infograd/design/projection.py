"""
Scaling-matrix design for the Poisson channel by projected gradient ascent on I(X;Y).

Phi is relaxed from {0,1}^{m x n} to a convex set (box, orthant or fixed row
sums); the dark current is held fixed. The result can be rounded back to a
binary matrix and the MI lost to rounding reported.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from shared.errors import InfogradError, NumericalError, ValidationError
from shared.numerics import Mat, RngStream, Vec, as_mat, as_vec, mat_to_csv, read_csv
from infograd.estimators.gradients import grad_phi_poisson, grad_phi_poisson_mc
from infograd.estimators.information import DEFAULT_EPSILON, MiMethod, mi_poisson_enum, mi_poisson_mc
from infograd.models.channels import PoissonChannel
from infograd.models.input_model import FiniteDistribution

logger = logging.getLogger(__name__)

MIN_STEP = 1e-8
STATIONARY_NORM = 1e-14

_ROW_SUM = re.compile(r'^row_sum\(\s*([^)]+)\s*\)$')


@dataclass(frozen=True)
class Constraint:
    """box01: 0 <= Phi <= 1; nonneg: Phi >= 0; row_sum: Phi >= 0 with every row summing to total."""
    kind: str
    total: Optional[float] = None

    @classmethod
    def parse(cls, text: str) -> 'Constraint':
        text = text.strip()
        if text in ('box01', 'nonneg'):
            return cls(text)
        match = _ROW_SUM.match(text)
        if match:
            try:
                total = float(match.group(1))
            except ValueError:
                raise ValidationError(f"row_sum needs a number, got {match.group(1)!r}")
            if not total >= 0:
                raise ValidationError(f"row_sum total must be nonnegative, got {total!r}")
            return cls('row_sum', total)
        raise ValidationError(f"unknown constraint {text!r}; use box01, nonneg or row_sum(c)")

    def __str__(self) -> str:
        return f'row_sum({self.total!r})' if self.kind == 'row_sum' else self.kind


def _project_simplex_rows(phi: Mat, total: float) -> Mat:
    # sort-and-threshold projection onto {v >= 0, sum v = total}, row by row
    ordered = -np.sort(-phi, axis=1)
    index = np.arange(1, phi.shape[1] + 1)
    averages = (np.cumsum(ordered, axis=1) - total) / index
    critical = ordered - averages >= 0
    last = phi.shape[1] - 1 - np.argmax(critical[:, ::-1], axis=1)
    threshold = averages[np.arange(phi.shape[0]), last]
    return np.maximum(phi - threshold[:, None], 0.0)


def project(phi, constraint: Constraint) -> Mat:
    """Euclidean projection of phi onto the constraint set."""
    phi = as_mat(phi, name='phi')
    if constraint.kind == 'box01':
        return np.clip(phi, 0.0, 1.0)
    if constraint.kind == 'nonneg':
        return np.maximum(phi, 0.0)
    if constraint.kind == 'row_sum':
        return _project_simplex_rows(phi, float(constraint.total))
    raise ValidationError(f"unknown constraint {constraint.kind!r}")


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """
    Attributes:
        prior: distribution of X (n-dimensional, nonnegative)
        m: number of measurements (rows of Phi)
        dark: fixed dark current, all entries positive
        constraint: feasible set of Phi
        init: starting Phi (m x n); drawn uniformly from [0, 1] with seed when omitted
        seed: seed of the random initialization
    """
    prior: FiniteDistribution
    m: int
    dark: Vec
    constraint: Constraint
    init: Optional[Mat] = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        dark = as_vec(self.dark, name='dark')
        if dark.shape[0] == 1 and self.m > 1:
            dark = np.full(self.m, dark[0])
        if dark.shape[0] != self.m:
            raise ValidationError(f"dark current has length {dark.shape[0]} but m = {self.m}")
        if np.any(dark <= 0):
            raise ValidationError("dark current must be positive for gradient-based design")
        self.prior.require_nonnegative()
        object.__setattr__(self, 'dark', dark)
        if self.init is not None:
            init = as_mat(self.init, name='init')
            if init.shape != (self.m, self.n):
                raise ValidationError(f"init must have shape {(self.m, self.n)}, got {init.shape}")
            object.__setattr__(self, 'init', init)

    @property
    def n(self) -> int:
        return self.prior.dim

    def initial_phi(self) -> Mat:
        if self.init is not None:
            return project(self.init, self.constraint)
        stream = RngStream(self.seed)
        return project(stream.generator.uniform(0.0, 1.0, (self.m, self.n)), self.constraint)

    def channel(self, phi) -> PoissonChannel:
        return PoissonChannel(phi, self.dark)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Union[str, Path] = '.') -> 'DesignProblem':
        """
        {"prior": {...} or "prior.json", "m": 3, "dark": 0.1 or [...],
         "constraint": "box01", "init": [[...]] or "init.csv", "seed": 0}
        """
        base_dir = Path(base_dir)
        missing = [key for key in ('prior', 'm', 'dark') if key not in data]
        if missing:
            raise ValidationError(f"design problem JSON is missing {', '.join(missing)}")

        prior = data['prior']
        if isinstance(prior, str):
            prior = FiniteDistribution.from_json(base_dir / prior)
        else:
            prior = FiniteDistribution.from_dict(prior)

        init = data.get('init')
        if isinstance(init, str):
            try:
                init = read_csv(base_dir / init)
            except OSError as e:
                raise ValidationError(f"cannot read init CSV {init}: {e}")
        elif init is not None:
            init = np.array(init, dtype=np.float64)

        return cls(prior=prior, m=int(data['m']), dark=np.atleast_1d(np.array(data['dark'], dtype=np.float64)),
                   constraint=Constraint.parse(str(data.get('constraint', 'box01'))), init=init,
                   seed=int(data.get('seed', 0)))

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> 'DesignProblem':
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot read design problem {path}: {e}")
        return cls.from_dict(data, base_dir=path.parent)


@dataclass(frozen=True)
class DesignOptions:
    max_iters: int = 100
    tol: float = 1e-6
    mi_method: MiMethod = MiMethod.ENUMERATION
    budget: int = 100000
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    threads: Optional[int] = None

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValidationError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if self.mi_method not in (MiMethod.ENUMERATION, MiMethod.MONTE_CARLO):
            raise ValidationError("design MI must be enumeration or Monte Carlo")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    mi: float
    gradient_norm: float
    projected_gradient_norm: float
    step: float
    accepted: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "mi": self.mi,
            "gradient_norm": self.gradient_norm,
            "projected_gradient_norm": self.projected_gradient_norm,
            "step": self.step,
            "accepted": self.accepted,
        }


@dataclass
class DesignTrace:
    records: List[IterationRecord] = field(default_factory=list)
    phi: Optional[Mat] = None
    stop_reason: str = ''

    @property
    def initial_mi(self) -> float:
        return self.records[0].mi

    @property
    def final_mi(self) -> float:
        return [r for r in self.records if r.accepted][-1].mi

    @property
    def iterations(self) -> int:
        return sum(1 for r in self.records[1:] if r.accepted)

    def accepted_mi(self) -> List[float]:
        return [r.mi for r in self.records if r.accepted]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "records": [r.to_dict() for r in self.records],
            "phi": mat_to_csv(self.phi),
            "stop_reason": self.stop_reason,
            "initial_mi": self.initial_mi,
            "final_mi": self.final_mi,
        }


class _Objective:
    """MI and its gradient for one iteration; Monte Carlo reuses one stream per iteration."""

    def __init__(self, problem: DesignProblem, opts: DesignOptions):
        self.problem = problem
        self.opts = opts
        self.stream: Optional[RngStream] = None

    def start_iteration(self, iteration: int) -> None:
        if self.opts.mi_method is MiMethod.MONTE_CARLO:
            self.stream = RngStream(self.opts.seed, stream_id=iteration)

    def mi(self, phi: Mat) -> float:
        ch = self.problem.channel(phi)
        if self.opts.mi_method is MiMethod.ENUMERATION:
            return mi_poisson_enum(ch, self.problem.prior, self.opts.epsilon, threads=self.opts.threads).value
        return mi_poisson_mc(ch, self.problem.prior, self.opts.budget, self.stream.fresh(), self.opts.threads).value

    def gradient(self, phi: Mat) -> Mat:
        ch = self.problem.channel(phi)
        if self.opts.mi_method is MiMethod.ENUMERATION:
            report = grad_phi_poisson(ch, self.problem.prior, self.opts.epsilon, threads=self.opts.threads)
        else:
            report = grad_phi_poisson_mc(ch, self.problem.prior, self.opts.budget, self.stream.fresh(),
                                         self.opts.threads)
        return report.grad_phi


def design_phi(problem: DesignProblem, opts: Optional[DesignOptions] = None) -> DesignTrace:
    """
    Projected gradient ascent Phi <- Proj(Phi + eta grad I).

    eta starts at 1 and halves until the MI increases or eta < 1e-8. The loop
    stops when the relative MI gain drops below tol, no step is accepted, the
    projected step no longer moves Phi, or max_iters is reached.

    Args:
        problem: Design problem
        opts: Iteration and estimator settings

    Returns:
        DesignTrace whose accepted MI values are nondecreasing
    """
    opts = opts or DesignOptions()
    objective = _Objective(problem, opts)
    phi = problem.initial_phi()
    trace = DesignTrace(phi=phi)

    objective.start_iteration(0)
    mi = objective.mi(phi)
    grad = _gradient(objective, phi, 0)
    trace.records.append(IterationRecord(0, mi, float(np.linalg.norm(grad)),
                                         _projected_norm(phi, grad, problem.constraint), 0.0, True))

    if problem.prior.is_deterministic or np.linalg.norm(grad) <= STATIONARY_NORM:
        trace.stop_reason = 'zero gradient'
        return trace

    for iteration in range(1, opts.max_iters + 1):
        objective.start_iteration(iteration)
        if opts.mi_method is MiMethod.MONTE_CARLO:
            # common random numbers: current point and candidates share this iteration's stream
            mi = objective.mi(phi)

        step = 1.0
        accepted = False
        moved = False
        while step >= MIN_STEP:
            candidate = project(phi + step * grad, problem.constraint)
            if np.array_equal(candidate, phi):
                break
            moved = True
            candidate_mi = objective.mi(candidate)
            if candidate_mi > mi:
                accepted = True
                break
            step /= 2.0

        if not moved:
            trace.stop_reason = 'projected step is zero'
            break
        if not accepted:
            trace.records.append(IterationRecord(iteration, mi, float(np.linalg.norm(grad)),
                                                 _projected_norm(phi, grad, problem.constraint), step, False))
            trace.stop_reason = 'no ascent step'
            break

        gain = (candidate_mi - mi) / max(abs(mi), np.finfo(np.float64).tiny)
        phi, mi = candidate, candidate_mi
        grad = _gradient(objective, phi, iteration)
        trace.records.append(IterationRecord(iteration, mi, float(np.linalg.norm(grad)),
                                             _projected_norm(phi, grad, problem.constraint), step, True))
        logger.info(f"Design iteration {iteration}: MI {mi:.10g} (step {step:g}, gain {gain:.2e})")
        if gain < opts.tol:
            trace.stop_reason = 'relative gain below tol'
            break
    else:
        trace.stop_reason = 'max_iters'

    trace.phi = phi
    return trace


def _gradient(objective: _Objective, phi: Mat, iteration: int) -> Mat:
    try:
        grad = objective.gradient(phi)
    except NumericalError as e:
        raise NumericalError(f"non-finite gradient at iteration {iteration}: {e}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite gradient at iteration {iteration}")
    return grad


def _projected_norm(phi: Mat, grad: Mat, constraint: Constraint) -> float:
    return float(np.linalg.norm(project(phi + grad, constraint) - phi))


def round_to_binary(phi, threshold: float = 0.5) -> Mat:
    """Entries >= threshold become 1, the rest 0."""
    if not 0 < threshold < 1:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold!r}")
    phi = as_mat(phi, name='phi')
    if np.any(phi < 0) or np.any(phi > 1):
        raise ValidationError("rounding needs phi entries in [0, 1]")
    return (phi >= threshold).astype(np.float64)


@dataclass(frozen=True)
class RoundingGap:
    relaxed_mi: float
    binary_mi: float
    binary_phi: Mat

    @property
    def gap(self) -> float:
        return self.relaxed_mi - self.binary_mi

    def to_dict(self) -> Dict[str, Any]:
        return {"relaxed_mi": self.relaxed_mi, "binary_mi": self.binary_mi, "gap": self.gap,
                "binary_phi": mat_to_csv(self.binary_phi)}


def rounding_gap(problem: DesignProblem, phi, threshold: float = 0.5,
                 epsilon: float = DEFAULT_EPSILON) -> RoundingGap:
    """Enumerated MI of the relaxed phi and of its binary rounding."""
    binary = round_to_binary(phi, threshold)
    try:
        relaxed_mi = mi_poisson_enum(problem.channel(phi), problem.prior, epsilon).value
        binary_mi = mi_poisson_enum(problem.channel(binary), problem.prior, epsilon).value
    except InfogradError:
        logger.warning("Rounding gap could not be enumerated")
        raise
    return RoundingGap(relaxed_mi=relaxed_mi, binary_mi=binary_mi, binary_phi=binary)
