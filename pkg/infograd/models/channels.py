"""
Vector Poisson and vector Gaussian channel models.

Poisson: Y_i ~ Pois((Phi x)_i + dark_i) independently over i.
Gaussian: Y = Phi x + N with N ~ N(0, I).
"""

import json
import math
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy.special import gammaln, xlogy
from scipy.stats import poisson

from shared.config import settings
from shared.errors import FeasibilityError, ValidationError
from shared.numerics import Mat, RngStream, Vec, as_mat, as_vec, read_csv
from infograd.models.input_model import FiniteDistribution

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class PoissonChannel:
    """Vector Poisson channel with scaling matrix phi (m x n) and dark current (m)."""
    phi: Mat
    dark: Vec

    def __post_init__(self):
        phi = as_mat(self.phi, name='phi')
        dark = as_vec(self.dark, name='dark')
        if dark.shape[0] != phi.shape[0]:
            raise ValidationError(f"dark current has length {dark.shape[0]} but phi has {phi.shape[0]} rows")
        if np.any(phi < 0):
            raise ValidationError("Poisson scaling matrix entries must be nonnegative")
        if np.any(dark < 0):
            raise ValidationError("dark current entries must be nonnegative")
        phi.setflags(write=False)
        dark.setflags(write=False)
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'dark', dark)

    kind = 'poisson'

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    def rates(self, x: Any) -> NDArray[np.float64]:
        """(Phi x + dark) for one input (n,) or a stack of inputs (K, n)."""
        return np.asarray(x, dtype=np.float64) @ self.phi.T + self.dark

    def with_phi(self, phi: Any) -> 'PoissonChannel':
        return PoissonChannel(np.array(phi, dtype=np.float64), self.dark)

    def with_dark(self, dark: Any) -> 'PoissonChannel':
        return PoissonChannel(self.phi, np.array(dark, dtype=np.float64))

    def with_entry(self, kind: str, index: Tuple[int, ...], value: float) -> 'PoissonChannel':
        """Copy with one phi entry (kind 'phi', index (i, j)) or dark entry (kind 'dark', index (i,)) replaced."""
        if kind == 'phi':
            phi = np.array(self.phi)
            phi[index] = value
            return self.with_phi(phi)
        if kind == 'dark':
            dark = np.array(self.dark)
            dark[index] = value
            return self.with_dark(dark)
        raise ValidationError(f"unknown Poisson parameter {kind!r}; use phi or dark")

    def require_input(self, d: FiniteDistribution) -> None:
        if d.dim != self.n:
            raise ValidationError(f"prior atoms have length {d.dim} but the channel expects {self.n}")
        d.require_nonnegative()

    def require_positive_dark(self) -> None:
        zero = np.flatnonzero(self.dark <= 0)
        if zero.size:
            raise ValidationError(
                f"dark current must be positive for gradient (dark[{int(zero[0])}] = {self.dark[zero[0]]!r})")

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "poisson", "phi": self.phi.tolist(), "dark": self.dark.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianChannel:
    """Vector Gaussian channel Y = Phi X + N with identity noise covariance."""
    phi: Mat

    def __post_init__(self):
        phi = as_mat(self.phi, name='phi')
        phi.setflags(write=False)
        object.__setattr__(self, 'phi', phi)

    kind = 'gaussian'

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    def means(self, x: Any) -> NDArray[np.float64]:
        return np.asarray(x, dtype=np.float64) @ self.phi.T

    def with_phi(self, phi: Any) -> 'GaussianChannel':
        return GaussianChannel(np.array(phi, dtype=np.float64))

    def with_entry(self, kind: str, index: Tuple[int, ...], value: float) -> 'GaussianChannel':
        if kind != 'phi':
            raise ValidationError(f"the Gaussian channel has no {kind!r} parameter; only phi")
        phi = np.array(self.phi)
        phi[index] = value
        return self.with_phi(phi)

    def require_input(self, d: FiniteDistribution) -> None:
        if d.dim != self.n:
            raise ValidationError(f"prior atoms have length {d.dim} but the channel expects {self.n}")

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "gaussian", "phi": self.phi.tolist()}


Channel = Union[PoissonChannel, GaussianChannel]


@dataclass(frozen=True)
class OutputGrid:
    """
    Truncation {0..B_1} x ... x {0..B_m} of the Poisson output space.

    Attributes:
        bounds: per-coordinate upper bounds B_i
        mass_floor: guaranteed minimum of P(Y in grid), 1 - epsilon
        atom_deficits: exact P(Y not in grid | X = atom_k) per atom
        deficit: exact P(Y not in grid) under the prior
    """
    bounds: Tuple[int, ...]
    mass_floor: float
    atom_deficits: Tuple[float, ...]
    deficit: float

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(b + 1 for b in self.bounds)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def achieved_mass(self) -> float:
        return 1.0 - self.deficit

    def cells(self, start: int = 0, stop: Optional[int] = None) -> NDArray[np.int64]:
        """Outputs with flat index in [start, stop), last coordinate fastest."""
        stop = self.size if stop is None else min(stop, self.size)
        flat = np.arange(start, stop, dtype=np.int64)
        return np.stack(np.unravel_index(flat, self.shape), axis=1).astype(np.int64)

    def on_boundary(self, cells: NDArray[np.int64]) -> NDArray[np.bool_]:
        return np.any(cells == np.asarray(self.bounds), axis=1)


def _check_counts(y: Any) -> NDArray[np.float64]:
    arr = np.asarray(y, dtype=np.float64)
    if np.any(arr < 0):
        raise ValidationError("Poisson outputs must be nonnegative")
    if np.any(arr != np.floor(arr)):
        raise ValidationError("Poisson outputs must be integers")
    return arr


def poisson_log_pmf(ch: PoissonChannel, x: Any, y: Any) -> float:
    """
    log P(y | x) = sum_i [y_i log r_i - r_i - log(y_i!)], r = Phi x + dark.

    A zero rate contributes 0 when y_i = 0 and -inf otherwise.
    """
    counts = _check_counts(y)
    rates = ch.rates(x)
    if counts.shape != rates.shape:
        raise ValidationError(f"output has shape {counts.shape}, expected {rates.shape}")
    return float(np.sum(xlogy(counts, rates) - rates - gammaln(counts + 1.0)))


def poisson_log_pmf_table(rates: NDArray[np.float64], outputs: NDArray[np.int64]) -> NDArray[np.float64]:
    """K x N table of log P(y_c | x_k) for rates (K, m) and outputs (N, m)."""
    counts = np.asarray(outputs, dtype=np.float64)
    terms = xlogy(counts[None, :, :], rates[:, None, :]) - rates[:, None, :]
    return terms.sum(axis=2) - gammaln(counts + 1.0).sum(axis=1)[None, :]


def poisson_sample(ch: PoissonChannel, x: Any, rng: RngStream) -> NDArray[np.int64]:
    return rng.generator.poisson(ch.rates(x)).astype(np.int64)


def gaussian_log_pdf(ch: GaussianChannel, x: Any, y: Any) -> float:
    residual = as_vec(y, name='y') - ch.means(x)
    if residual.shape[0] != ch.m:
        raise ValidationError(f"output has length {residual.shape[0]}, expected {ch.m}")
    return -0.5 * ch.m * LOG_2PI - 0.5 * float(residual @ residual)


def gaussian_sample(ch: GaussianChannel, x: Any, rng: RngStream) -> Vec:
    return ch.means(x) + rng.generator.standard_normal(ch.m)


def _poisson_quantile(rate: float, tail: float) -> int:
    """Smallest B with P(Pois(rate) > B) <= tail."""
    if rate <= 0:
        return 0
    guess = poisson.isf(tail, rate)
    bound = int(guess) if np.isfinite(guess) and guess > 0 else 0
    while poisson.sf(bound, rate) > tail:
        bound += 1
    while bound > 0 and poisson.sf(bound - 1, rate) <= tail:
        bound -= 1
    return bound


def atom_grid_deficits(rates: NDArray[np.float64], bounds: Tuple[int, ...]) -> NDArray[np.float64]:
    """Exact P(Y outside grid | atom) for rates (K, m); coordinates are independent."""
    positive = rates > 0
    safe = np.where(positive, rates, 1.0)
    tails = np.where(positive, poisson.sf(np.asarray(bounds)[None, :], safe), 0.0)
    return -np.expm1(np.sum(np.log1p(-tails), axis=1))


def build_output_grid(ch: PoissonChannel, d: FiniteDistribution, epsilon: float,
                      cell_cap: Optional[int] = None) -> OutputGrid:
    """
    Per-coordinate truncation holding at least 1 - epsilon of P(Y).

    Args:
        ch: Poisson channel
        d: Prior over inputs
        epsilon: Allowed total mass outside the grid, 0 < epsilon < 1
        cell_cap: Maximum number of cells, defaults to INFOGRAD_MAX_GRID_CELLS

    Returns:
        OutputGrid with the achieved mass recomputed exactly
    """
    if not 0 < epsilon < 1:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    ch.require_input(d)
    cap = settings.max_grid_cells if cell_cap is None else cell_cap

    rates = ch.rates(d.atoms)
    max_rates = rates.max(axis=0)
    tail = epsilon / ch.m
    bounds = tuple(_poisson_quantile(float(r), tail) for r in max_rates)

    size = math.prod(b + 1 for b in bounds)
    if size > cap:
        raise FeasibilityError(
            f"output grid has {size} cells, above the cap of {cap}; use the Monte Carlo method (--method mc)")

    atom_deficits = atom_grid_deficits(rates, bounds)
    deficit = float(d.probs @ atom_deficits)

    logger.info(f"Built output grid with bounds {bounds} ({size} cells), deficit {deficit:.3e}")
    return OutputGrid(bounds=bounds, mass_floor=1.0 - epsilon,
                      atom_deficits=tuple(float(v) for v in atom_deficits), deficit=deficit)


def grid_for_channels(channels: Tuple[PoissonChannel, ...], d: FiniteDistribution, epsilon: float,
                      cell_cap: Optional[int] = None) -> OutputGrid:
    """
    One grid valid for several channels.

    Bounds are the coordinate-wise maximum and each atom deficit is the
    largest over the channels.
    """
    grids = [build_output_grid(ch, d, epsilon, cell_cap) for ch in channels]
    bounds = tuple(max(values) for values in zip(*(g.bounds for g in grids)))
    deficits = np.max([atom_grid_deficits(ch.rates(d.atoms), bounds) for ch in channels], axis=0)
    return OutputGrid(bounds=bounds, mass_floor=1.0 - epsilon,
                      atom_deficits=tuple(float(v) for v in deficits), deficit=float(d.probs @ deficits))


def load_channel(path: Union[str, Path]) -> Channel:
    """
    Read a channel JSON file.

    Format: {"type": "poisson"|"gaussian", "phi": <CSV path or nested list>, "dark": [...]}
    A relative CSV path is resolved against the JSON file's directory.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"cannot read channel {path}: {e}")
    return channel_from_dict(data, base_dir=path.parent)


def channel_from_dict(data: Dict[str, Any], base_dir: Union[str, Path] = '.') -> Channel:
    kind = data.get('type')
    raw_phi = data.get('phi')
    if raw_phi is None:
        raise ValidationError("channel JSON needs 'phi'")
    if isinstance(raw_phi, str):
        phi_path = Path(raw_phi)
        if not phi_path.is_absolute():
            phi_path = Path(base_dir) / phi_path
        try:
            phi = read_csv(phi_path)
        except OSError as e:
            raise ValidationError(f"cannot read phi CSV {phi_path}: {e}")
    else:
        phi = np.array(raw_phi, dtype=np.float64)

    if kind == 'poisson':
        if 'dark' not in data:
            raise ValidationError("poisson channel JSON needs 'dark'")
        return PoissonChannel(phi, np.array(data['dark'], dtype=np.float64))
    if kind == 'gaussian':
        return GaussianChannel(phi)
    raise ValidationError(f"channel type must be 'poisson' or 'gaussian', got {kind!r}")
