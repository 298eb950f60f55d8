"""
Randomized audit of generalized Bregman divergence properties:
cone nonnegativity, linearity in the generator, convexity in the first
argument, and Frechet-derivative consistency.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from shared.config import settings
from shared.errors import ValidationError
from shared.numerics import RngStream, block_sizes, run_blocks
from infograd.generators.cones import ConeOrder
from infograd.generators.matrix import MatrixGenerator, bregman_generalized, combine, directional_derivative, stacked_generator
from infograd.generators.scalar import scalar_generator

logger = logging.getLogger(__name__)

TRIAL_BLOCK = 1024
MAX_WITNESSES = 5
CONE_TOLERANCE = 1e-10
LINEARITY_TOLERANCE = 1e-10
FRECHET_LINEARITY_TOLERANCE = 1e-9
DIRECTIONAL_TOLERANCE = 1e-6


@dataclass
class PropertyReport:
    """Outcome of check_properties; violations are data, witnesses keep the first few."""
    generator: str
    cone: str
    trials: int
    cone_asserted: bool
    nonnegativity_violations: int = 0
    convexity_violations: int = 0
    linearity_error: float = 0.0
    frechet_linearity_error: float = 0.0
    frechet_directional_error: float = 0.0
    witnesses: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        algebra = (self.linearity_error <= LINEARITY_TOLERANCE
                   and self.frechet_linearity_error <= FRECHET_LINEARITY_TOLERANCE
                   and self.frechet_directional_error <= DIRECTIONAL_TOLERANCE)
        if not self.cone_asserted:
            return algebra
        return algebra and self.nonnegativity_violations == 0 and self.convexity_violations == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "generator": self.generator,
            "cone": self.cone,
            "trials": self.trials,
            "cone_asserted": self.cone_asserted,
            "nonnegativity_violations": self.nonnegativity_violations,
            "convexity_violations": self.convexity_violations,
            "linearity_error": self.linearity_error,
            "frechet_linearity_error": self.frechet_linearity_error,
            "frechet_directional_error": self.frechet_directional_error,
            "witnesses": self.witnesses,
            "passed": self.passed,
        }


def _relative(diff: np.ndarray, scale: np.ndarray) -> float:
    axes = (-2, -1)
    return float((np.abs(diff).max(axis=axes) / np.maximum(1.0, np.abs(scale).max(axis=axes))).max())


def _witness(kind: str, margin: float, **points: np.ndarray) -> Dict[str, Any]:
    return {"kind": kind, "margin": margin, **{k: np.asarray(v).tolist() for k, v in points.items()}}


def check_properties(g: MatrixGenerator, cone: Optional[ConeOrder] = None, trials: int = 10000,
                     rng: Optional[RngStream] = None, partner: Optional[MatrixGenerator] = None,
                     threads: Optional[int] = None) -> PropertyReport:
    """
    Sweep random (x1, x2, y, theta) tuples over the generator's domain.

    Args:
        g: Generator under audit
        cone: Order to test, defaults to the generator's declared cone
        trials: Number of random tuples
        rng: Random stream, block b uses rng.child(b)
        partner: Second generator for the linearity identity, defaults to a stacked squared norm
        threads: Worker count

    Returns:
        PropertyReport; cone violations only fail the report when the generator is flagged convex
    """
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    cone = cone or g.order
    rng = rng or RngStream(0)
    partner = partner or stacked_generator([scalar_generator('squared_norm')], g.rows, g.cols, g.dim)
    sizes = block_sizes(trials, TRIAL_BLOCK)

    def run(b: int) -> Dict[str, Any]:
        stream = rng.child(b)
        size = sizes[b]
        x1, x2, y = g.sample(stream, size), g.sample(stream, size), g.sample(stream, size)
        theta = stream.generator.uniform(0.0, 1.0, (size, 1))
        d1 = bregman_generalized(g, x1, y)
        d2 = bregman_generalized(g, x2, y)
        mid = bregman_generalized(g, theta * x1 + (1.0 - theta) * x2, y)

        scale = 1.0 + np.abs(np.concatenate([d1, d2], axis=-1)).max(axis=(-2, -1))
        nonneg = cone.margins(d1)
        gap = theta[:, :, None] * d1 + (1.0 - theta[:, :, None]) * d2 - mid
        convex = cone.margins(gap)
        bad_nonneg = np.flatnonzero(nonneg < -CONE_TOLERANCE * scale)
        bad_convex = np.flatnonzero(convex < -CONE_TOLERANCE * scale)

        c1, c2 = stream.generator.uniform(0.1, 3.0, 2)
        mixed = bregman_generalized(combine(float(c1), g, float(c2), partner), x1, y)
        expected = c1 * d1 + c2 * bregman_generalized(partner, x1, y)
        linearity = _relative(mixed - expected, expected)

        h1 = stream.generator.standard_normal((size, g.dim))
        h2 = stream.generator.standard_normal((size, g.dim))
        a = stream.generator.uniform(-2.0, 2.0, (size, 1))
        f1 = g.frechet(y, h1)
        additivity = _relative(g.frechet(y, h1 + h2) - f1 - g.frechet(y, h2), f1)
        homogeneity = _relative(g.frechet(y, a * h1) - a[:, :, None] * f1, f1)
        directional = _relative(directional_derivative(g, y, h1) - f1, f1)

        witnesses = [_witness('nonnegativity', float(nonneg[i]), x=x1[i], y=y[i]) for i in bad_nonneg[:MAX_WITNESSES]]
        witnesses += [_witness('convexity', float(convex[i]), x1=x1[i], x2=x2[i], y=y[i], theta=theta[i])
                      for i in bad_convex[:MAX_WITNESSES]]
        return {
            "nonneg": int(bad_nonneg.size),
            "convex": int(bad_convex.size),
            "linearity": linearity,
            "frechet_linearity": max(additivity, homogeneity),
            "directional": directional,
            "witnesses": witnesses,
        }

    parts = run_blocks(run, len(sizes), settings.resolve_threads(threads))
    report = PropertyReport(generator=g.name, cone=cone.kind.value, trials=trials, cone_asserted=g.convex_verified)
    for part in parts:
        report.nonnegativity_violations += part["nonneg"]
        report.convexity_violations += part["convex"]
        report.linearity_error = max(report.linearity_error, part["linearity"])
        report.frechet_linearity_error = max(report.frechet_linearity_error, part["frechet_linearity"])
        report.frechet_directional_error = max(report.frechet_directional_error, part["directional"])
        room = MAX_WITNESSES - len(report.witnesses)
        if room > 0:
            report.witnesses.extend(part["witnesses"][:room])

    logger.info(f"Property sweep of {g.name}: {report.nonnegativity_violations} nonnegativity and "
                f"{report.convexity_violations} convexity violations in {trials} trials")
    return report
