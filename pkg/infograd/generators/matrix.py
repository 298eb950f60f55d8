"""
Matrix-valued generators and the generalized Bregman divergence

    D_F(x, y) = F(x) - F(y) - DF(y)(x - y)

with DF(y) the Frechet derivative of F at y. All eval/frechet callables accept
leading batch axes: x of shape (..., n) maps to (..., rows, cols).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import xlogy

from shared.errors import ValidationError
from shared.numerics import Mat, RngStream, as_mat, as_vec
from infograd.generators.cones import ConeKind, ConeOrder
from infograd.generators.scalar import ScalarGenerator, in_domain, sample_domain

logger = logging.getLogger(__name__)

_DOMAIN_RANK = {'real': 0, 'nonnegative': 1, 'positive': 2, 'negative': 2}


@dataclass(frozen=True)
class MatrixGenerator:
    """
    F: R^n -> R^{rows x cols}.

    Attributes:
        name: label used in reports
        dim: input length n
        rows, cols: output shape
        eval: x (..., n) -> (..., rows, cols)
        frechet: (y, h) -> DF(y)h, batched like eval
        cone: order in which the generator is declared convex
        convex_verified: True when K-convexity is known to hold, so property sweeps assert it
        domain: per-entry input domain (real, nonnegative, positive, negative)
        boundary_ok: the Frechet derivative also exists on the domain boundary
    """
    name: str
    dim: int
    rows: int
    cols: int
    eval: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    frechet: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    cone: ConeKind = ConeKind.ENTRYWISE_NONNEG
    convex_verified: bool = False
    domain: str = 'real'
    boundary_ok: bool = False

    @property
    def shape(self):
        return self.rows, self.cols

    @property
    def order(self) -> ConeOrder:
        return ConeOrder(self.cone)

    def require_domain(self, x, interior: bool = False, label: str = 'x') -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[-1:] != (self.dim,):
            raise ValidationError(f"{label} must have length {self.dim} for generator {self.name}, got shape {arr.shape}")
        interior = interior and not self.boundary_ok
        if not in_domain(self.domain, arr, interior):
            where = 'interior of the ' if interior else ''
            raise ValidationError(f"{label} is outside the {where}{self.domain} domain of generator {self.name}")
        return arr

    def sample(self, stream: RngStream, count: int) -> np.ndarray:
        """count random inputs from the domain interior, shape (count, dim)."""
        return sample_domain(self.domain, stream, (int(count), self.dim))


def bregman_generalized(g: MatrixGenerator, x, y) -> Mat:
    """
    F(x) - F(y) - DF(y)(x - y), batched over leading axes.

    Args:
        g: Matrix generator
        x: (..., n) first argument, closed domain
        y: (..., n) second argument, domain interior

    Returns:
        (..., rows, cols) divergence; exactly zero where x == y
    """
    x = g.require_domain(x, label='x')
    y = g.require_domain(y, interior=True, label='y')
    return g.eval(x) - g.eval(y) - g.frechet(y, x - y)


def poisson_generator(phi, dark) -> MatrixGenerator:
    """
    F(x) = x log(Phi x + dark)^T - [x, ..., x] + ones(n, m), an n x m matrix.

    DF(y)h = h log(Phi y + dark)^T + y (Phi h / (Phi y + dark))^T - [h, ..., h].
    """
    phi = as_mat(phi, name='phi')
    dark = as_vec(dark, name='dark')
    if np.any(phi < 0):
        raise ValidationError("Poisson generator needs a nonnegative scaling matrix")
    if dark.shape[0] != phi.shape[0]:
        raise ValidationError(f"dark current has length {dark.shape[0]} but phi has {phi.shape[0]} rows")
    if np.any(dark <= 0):
        zero = int(np.flatnonzero(dark <= 0)[0])
        raise ValidationError(f"Poisson generator needs positive dark current (dark[{zero}] = {dark[zero]!r})")
    m, n = phi.shape

    def rates(x):
        return np.einsum('ij,...j->...i', phi, x) + dark

    def eval_(x):
        x = np.asarray(x, dtype=np.float64)
        r = rates(x)
        return xlogy(x[..., :, None], r[..., None, :]) - x[..., :, None] + 1.0

    def frechet(y, h):
        y = np.asarray(y, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        r = rates(y)
        ratio = np.einsum('ij,...j->...i', phi, h) / r
        return h[..., :, None] * np.log(r)[..., None, :] + y[..., :, None] * ratio[..., None, :] - h[..., :, None]

    return MatrixGenerator(name='poisson', dim=n, rows=n, cols=m, eval=eval_, frechet=frechet,
                           cone=ConeKind.ENTRYWISE_NONNEG, convex_verified=False, domain='nonnegative',
                           boundary_ok=True)


def gaussian_generator(phi) -> MatrixGenerator:
    """F(x) = Phi x x^T (m x n); DF(y)h = Phi (h y^T + y h^T)."""
    phi = as_mat(phi, name='phi')
    m, n = phi.shape

    def eval_(x):
        x = np.asarray(x, dtype=np.float64)
        return np.einsum('ij,...j,...k->...ik', phi, x, x)

    def frechet(y, h):
        y = np.asarray(y, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        return np.einsum('ij,...j,...k->...ik', phi, h, y) + np.einsum('ij,...j,...k->...ik', phi, y, h)

    square = m == n
    # Phi v v^T is PSD for every v only when Phi is a nonnegative multiple of the identity
    psd_known = square and phi[0, 0] >= 0 and np.array_equal(phi, phi[0, 0] * np.eye(n))
    return MatrixGenerator(name='gaussian', dim=n, rows=m, cols=n, eval=eval_, frechet=frechet,
                           cone=ConeKind.PSD_SQUARE if square else ConeKind.ENTRYWISE_NONNEG,
                           convex_verified=bool(psd_known), domain='real')


def stacked_generator(scalars: Sequence[ScalarGenerator], rows: int, cols: int, dim: int) -> MatrixGenerator:
    """
    Every output entry is a classical separable generator of the whole input.

    Entry (r, c) uses scalars[(r * cols + c) % len(scalars)]; the divergence is
    entrywise a classical Bregman divergence, hence entrywise nonnegative.
    """
    if not scalars:
        raise ValidationError("stacked generator needs at least one scalar generator")
    if rows < 1 or cols < 1 or dim < 1:
        raise ValidationError(f"stacked generator shape must be positive, got rows={rows}, cols={cols}, dim={dim}")
    layout = [scalars[k % len(scalars)] for k in range(rows * cols)]
    domains = {s.domain for s in scalars}
    if 'negative' in domains and domains & {'nonnegative', 'positive'}:
        raise ValidationError("stacked scalar generators must share a compatible domain")
    domain = max(domains, key=lambda name: _DOMAIN_RANK[name])

    def eval_(x):
        x = np.asarray(x, dtype=np.float64)
        values = np.stack([s.f(x).sum(axis=-1) for s in layout], axis=-1)
        return values.reshape(x.shape[:-1] + (rows, cols))

    def frechet(y, h):
        y = np.asarray(y, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        values = np.stack([(s.df(y) * h).sum(axis=-1) for s in layout], axis=-1)
        return values.reshape(np.broadcast_shapes(y.shape, h.shape)[:-1] + (rows, cols))

    name = 'stacked(' + ','.join(dict.fromkeys(s.name for s in scalars)) + ')'
    return MatrixGenerator(name=name, dim=dim, rows=rows, cols=cols, eval=eval_, frechet=frechet,
                           cone=ConeKind.ENTRYWISE_NONNEG, convex_verified=True, domain=domain)


def combine(c1: float, f: MatrixGenerator, c2: float, g: MatrixGenerator) -> MatrixGenerator:
    """Positive combination c1 F + c2 G; its divergence is c1 D_F + c2 D_G."""
    if not (c1 > 0 and c2 > 0):
        raise ValidationError(f"combination weights must be positive, got {c1!r} and {c2!r}")
    if (f.dim, f.rows, f.cols) != (g.dim, g.rows, g.cols):
        raise ValidationError(f"cannot combine {f.name} {f.shape} with {g.name} {g.shape}")
    if f.domain != g.domain and 'real' not in (f.domain, g.domain):
        raise ValidationError(f"generators {f.name} and {g.name} have incompatible domains")
    domain = f.domain if g.domain == 'real' else g.domain

    def eval_(x):
        return c1 * f.eval(x) + c2 * g.eval(x)

    def frechet(y, h):
        return c1 * f.frechet(y, h) + c2 * g.frechet(y, h)

    same_cone = f.cone is g.cone
    return MatrixGenerator(name=f'{c1!r}*{f.name}+{c2!r}*{g.name}', dim=f.dim, rows=f.rows, cols=f.cols,
                           eval=eval_, frechet=frechet, cone=f.cone,
                           convex_verified=same_cone and f.convex_verified and g.convex_verified, domain=domain,
                           boundary_ok=all(k.boundary_ok or k.domain == 'real' for k in (f, g)))


def directional_derivative(g: MatrixGenerator, y, h, step: float = 1e-5) -> Mat:
    """Central difference (F(y + t h) - F(y - t h)) / 2t."""
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return (g.eval(y + step * h) - g.eval(y - step * h)) / (2.0 * step)
