"""
Separable scalar generators F(x) = sum_i f(x_i), their classical Bregman
divergences and Legendre conjugates.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlogy

from shared.errors import ValidationError
from shared.numerics import RngStream, Vec, as_vec, compensated_sum

logger = logging.getLogger(__name__)

Elementwise = Callable[[np.ndarray], np.ndarray]

DOMAINS = ('real', 'nonnegative', 'positive', 'negative')

_BRACKET_STEPS = 1100


def in_domain(domain: str, x: np.ndarray, interior: bool = False) -> bool:
    """Closed domain for the first argument, interior for points where the gradient is taken."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        return False
    if domain == 'real':
        return True
    if domain == 'nonnegative':
        return bool(np.all(x > 0)) if interior else bool(np.all(x >= 0))
    if domain == 'positive':
        return bool(np.all(x > 0))
    if domain == 'negative':
        return bool(np.all(x < 0))
    raise ValidationError(f"unknown domain {domain!r}")


def sample_domain(domain: str, stream: RngStream, shape) -> np.ndarray:
    """Random points well inside a domain."""
    gen = stream.generator
    if domain == 'real':
        return 1.5 * gen.standard_normal(shape)
    if domain in ('nonnegative', 'positive'):
        return gen.uniform(0.05, 3.0, shape)
    if domain == 'negative':
        return -gen.uniform(0.05, 3.0, shape)
    raise ValidationError(f"unknown domain {domain!r}")


@dataclass(frozen=True)
class ScalarGenerator:
    """
    Strictly convex separable generator.

    Attributes:
        name: catalog name
        domain: one of real, nonnegative, positive, negative (per entry)
        f: elementwise value, F(x) = sum f(x_i)
        df: elementwise derivative
        d2f: elementwise second derivative (curvature)
        conjugate: builds the Legendre conjugate in closed form, None when unknown
    """
    name: str
    domain: str
    f: Elementwise = field(repr=False)
    df: Elementwise = field(repr=False)
    d2f: Elementwise = field(repr=False)
    conjugate: Optional[Callable[[], 'ScalarGenerator']] = field(default=None, repr=False)

    def require_domain(self, x, interior: bool = False, label: str = 'x') -> None:
        if not in_domain(self.domain, x, interior):
            where = 'interior of the ' if interior else ''
            raise ValidationError(f"{label} is outside the {where}{self.domain} domain of generator {self.name}")

    def eval(self, x) -> float:
        x = as_vec(x, name='x')
        self.require_domain(x)
        return compensated_sum(self.f(x))

    def grad(self, x) -> Vec:
        x = as_vec(x, name='x')
        self.require_domain(x, interior=True)
        return self.df(x)

    def has_closed_conjugate(self) -> bool:
        return self.conjugate is not None


def bregman_scalar(g: ScalarGenerator, x, y) -> float:
    """
    D_F(x, y) = F(x) - F(y) - <grad F(y), x - y>.

    Args:
        g: Generator
        x: First argument, in the closed domain
        y: Second argument, in the domain interior

    Returns:
        The divergence, zero exactly when x == y
    """
    x = as_vec(x, name='x')
    y = as_vec(y, name='y')
    if x.shape != y.shape:
        raise ValidationError(f"x has length {x.shape[0]} but y has length {y.shape[0]}")
    g.require_domain(x, label='x')
    g.require_domain(y, interior=True, label='y')
    terms = np.concatenate([g.f(x), -g.f(y), -g.df(y) * (x - y)])
    return compensated_sum(terms)


# Catalog

def _squared_norm() -> ScalarGenerator:
    return ScalarGenerator('squared_norm', 'real', lambda t: t * t, lambda t: 2.0 * t,
                           lambda t: np.full_like(t, 2.0), conjugate=_quarter_squared_norm)


def _quarter_squared_norm() -> ScalarGenerator:
    return ScalarGenerator('quarter_squared_norm', 'real', lambda s: 0.25 * s * s, lambda s: 0.5 * s,
                           lambda s: np.full_like(s, 0.5), conjugate=_squared_norm)


def _half_squared_norm() -> ScalarGenerator:
    return ScalarGenerator('half_squared_norm', 'real', lambda t: 0.5 * t * t, lambda t: t,
                           lambda t: np.ones_like(t), conjugate=_half_squared_norm)


def _negative_entropy() -> ScalarGenerator:
    return ScalarGenerator('negative_entropy', 'nonnegative', lambda t: xlogy(t, t), lambda t: np.log(t) + 1.0,
                           lambda t: 1.0 / t, conjugate=_shifted_exponential)


def _shifted_exponential() -> ScalarGenerator:
    return ScalarGenerator('shifted_exponential', 'real', lambda s: np.exp(s - 1.0), lambda s: np.exp(s - 1.0),
                           lambda s: np.exp(s - 1.0), conjugate=_negative_entropy)


def _relative_entropy() -> ScalarGenerator:
    return ScalarGenerator('relative_entropy', 'nonnegative', lambda t: xlogy(t, t) - t, np.log,
                           lambda t: 1.0 / t, conjugate=_exponential)


def _exponential() -> ScalarGenerator:
    return ScalarGenerator('exponential', 'real', np.exp, np.exp, np.exp, conjugate=_relative_entropy)


def _itakura_saito() -> ScalarGenerator:
    return ScalarGenerator('itakura_saito', 'positive', lambda t: -np.log(t), lambda t: -1.0 / t,
                           lambda t: 1.0 / (t * t), conjugate=_itakura_saito_conjugate)


def _itakura_saito_conjugate() -> ScalarGenerator:
    return ScalarGenerator('itakura_saito_conjugate', 'negative', lambda s: -1.0 - np.log(-s),
                           lambda s: -1.0 / s, lambda s: 1.0 / (s * s), conjugate=_itakura_saito)


CATALOG: Dict[str, Callable[[], ScalarGenerator]] = {
    'squared_norm': _squared_norm,
    'half_squared_norm': _half_squared_norm,
    'negative_entropy': _negative_entropy,
    'relative_entropy': _relative_entropy,
    'itakura_saito': _itakura_saito,
    'exponential': _exponential,
}


def scalar_generator(name: str) -> ScalarGenerator:
    if name not in CATALOG:
        raise ValidationError(f"unknown generator {name!r}; choose from {', '.join(sorted(CATALOG))}")
    return CATALOG[name]()


def scalar_poisson_generator(phi: float, dark: float = 0.0) -> ScalarGenerator:
    """
    f(x) = x log(phi x + dark) - x + 1, the scalar Poisson channel's generator.

    With dark = 0 this is x log(phi x) - x + 1 and the conjugate is exp(s)/phi - 1;
    with dark > 0 the conjugate has no closed form and legendre_dual inverts numerically.
    """
    if not phi > 0:
        raise ValidationError(f"scalar Poisson generator needs phi > 0, got {phi!r}")
    if dark < 0:
        raise ValidationError(f"dark current must be nonnegative, got {dark!r}")

    def f(t):
        return xlogy(t, phi * t + dark) - t + 1.0

    def df(t):
        rate = phi * t + dark
        return np.log(rate) + phi * t / rate - 1.0

    def d2f(t):
        rate = phi * t + dark
        return phi / rate + phi * dark / (rate * rate)

    conjugate = None
    if dark == 0:
        def conjugate():
            return ScalarGenerator('scalar_poisson_conjugate', 'real', lambda s: np.exp(s) / phi - 1.0,
                                   lambda s: np.exp(s) / phi, lambda s: np.exp(s) / phi,
                                   conjugate=lambda: scalar_poisson_generator(phi, dark))
    return ScalarGenerator('scalar_poisson', 'nonnegative', f, df, d2f, conjugate=conjugate)


def scalar_gaussian_generator(phi: float) -> ScalarGenerator:
    """f(x) = phi x^2, the scalar Gaussian channel's generator."""
    if not phi > 0:
        raise ValidationError(f"scalar Gaussian generator needs phi > 0, got {phi!r}")

    def conjugate():
        return ScalarGenerator('scalar_gaussian_conjugate', 'real', lambda s: s * s / (4.0 * phi),
                               lambda s: s / (2.0 * phi), lambda s: np.full_like(s, 1.0 / (2.0 * phi)),
                               conjugate=lambda: scalar_gaussian_generator(phi))
    return ScalarGenerator('scalar_gaussian', 'real', lambda t: phi * t * t, lambda t: 2.0 * phi * t,
                           lambda t: np.full_like(t, 2.0 * phi), conjugate=conjugate)


# Legendre duality

def _bracket(df: Elementwise, domain: str, target: float):
    def g(t):
        return float(df(np.array([t]))[0]) - target

    if domain == 'real':
        lo, hi = -1.0, 1.0
        for _ in range(_BRACKET_STEPS):
            if g(lo) < 0 < g(hi):
                return lo, hi
            if g(lo) >= 0:
                lo *= 2.0
            if g(hi) <= 0:
                hi *= 2.0
        return None
    sign = -1.0 if domain == 'negative' else 1.0
    lo, hi = 1.0, 1.0
    for _ in range(_BRACKET_STEPS):
        a, b = sorted((sign * lo, sign * hi))
        if g(a) < 0 < g(b):
            return a, b
        if g(a) >= 0:
            if sign > 0:
                lo /= 2.0
            else:
                hi *= 2.0
        if g(b) <= 0:
            if sign > 0:
                hi *= 2.0
            else:
                lo /= 2.0
    return None


def _inverse_gradient(g: ScalarGenerator) -> Elementwise:
    def invert(s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        out = np.empty_like(s)
        for index, target in np.ndenumerate(s):
            bracket = _bracket(g.df, g.domain, float(target))
            if bracket is None:
                raise ValidationError(f"gradient of generator {g.name} is not invertible at s = {float(target)!r}")
            out[index] = brentq(lambda t: float(g.df(np.array([t]))[0]) - target, *bracket,
                                xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        return out
    return invert


def legendre_dual(g: ScalarGenerator) -> ScalarGenerator:
    """
    Legendre conjugate F*(s) = sup_x s x - F(x), entry by entry.

    Closed forms come from the catalog; otherwise grad F is inverted numerically
    by monotone root finding, so F*(s) = s t - f(t) and grad F*(s) = t with
    t = (grad F)^{-1}(s).
    """
    if g.conjugate is not None:
        return g.conjugate()

    logger.debug(f"Numerical conjugate for generator {g.name}")
    invert = _inverse_gradient(g)

    def f_star(s):
        t = invert(s)
        return s * t - g.f(t)

    def d2f_star(s):
        return 1.0 / g.d2f(invert(s))

    return ScalarGenerator(f'{g.name}_conjugate', 'real', f_star, invert, d2f_star, conjugate=lambda: g)


def dual_point(g: ScalarGenerator, x) -> Vec:
    """x* = grad F(x)."""
    return g.grad(x)
