#!/usr/bin/env python3
"""
Freeze golden values for the test suite into tests/fixtures/goldens.json
"""

import json
import sys
from pathlib import Path

import numpy as np

from shared.numerics import RngStream, mat_to_csv
from infograd.design.projection import DesignOptions, design_phi, rounding_gap
from infograd.estimators.gradients import grad_poisson
from infograd.estimators.information import MiMethod, mi_gaussian, mi_poisson_enum
from infograd.evaluators.minimizer import OutcomeSpace, Partition, minimizer_check
from infograd.evaluators.properties import check_properties
from infograd.generators.matrix import poisson_generator
from infograd.instances import d1, s1, v1, v1_gaussian, v1_prior
from infograd.models.channels import poisson_sample
from infograd.models.input_model import sample

FIXTURE = Path(__file__).parent / 'tests' / 'fixtures' / 'goldens.json'
SEED = 7


def sampling_goldens():
    """First five draws of the prior and channel samplers at the frozen seed"""
    prior_stream = RngStream(SEED)
    atoms = [sample(v1_prior(), prior_stream).tolist() for _ in range(5)]
    channel, _ = v1()
    output_stream = RngStream(SEED)
    outputs = [poisson_sample(channel, [1.0, 1.0], output_stream).tolist() for _ in range(5)]
    print(f"  V1 prior: {atoms}")
    print(f"  V1 outputs at x = (1, 1): {outputs}")
    return {"V1": {"seed": SEED, "atoms": atoms, "outputs": outputs}}


def information_goldens():
    """Enumerated MI on the Poisson instances, quadrature MI on V1-Gaussian"""
    goldens = {}
    for name, (channel, prior) in (('S1', s1()), ('V1', v1())):
        estimate = mi_poisson_enum(channel, prior)
        goldens[name] = {"mi": estimate.value, "error_bound": estimate.error_bound}
        print(f"  {name}: I = {estimate.value!r} (bound {estimate.error_bound:.1e})")

    channel, prior = v1_gaussian()
    estimate = mi_gaussian(channel, prior, MiMethod.QUADRATURE)
    goldens['V1-Gaussian'] = {"mi": estimate.value, "error_bound": estimate.error_bound}
    print(f"  V1-Gaussian: I = {estimate.value!r}")
    return goldens


def gradient_goldens():
    goldens = {}
    for name, (channel, prior) in (('S1', s1()), ('V1', v1())):
        report = grad_poisson(channel, prior)
        goldens[name] = {"grad_phi": mat_to_csv(report.grad_phi), "grad_dark": mat_to_csv(report.grad_dark)}
        print(f"  {name}: grad_phi = {report.grad_phi.tolist()}")
    return goldens


def bregman_goldens():
    """Poisson-generator findings on V1: recorded as observed, not presumed"""
    channel, prior = v1()
    g = poisson_generator(channel.phi, channel.dark)
    properties = check_properties(g, trials=10000, rng=RngStream(SEED))
    space = OutcomeSpace.from_channel(channel, prior)
    minimizer = minimizer_check(g, space, Partition.by_output_parity(space, 0), 10000, RngStream(SEED, 1))
    print(f"  Poisson generator: {properties.nonnegativity_violations} nonnegativity, "
          f"{properties.convexity_violations} convexity violations; {minimizer.dominating} dominating alternatives")
    return {
        "poisson_generator_v1": {
            "nonnegativity_violations": properties.nonnegativity_violations,
            "convexity_violations": properties.convexity_violations,
            "parity_dominating": minimizer.dominating,
        }
    }


def design_goldens():
    problem = d1()
    trace = design_phi(problem, DesignOptions())
    gap = rounding_gap(problem, trace.phi)
    print(f"  D1: {trace.initial_mi!r} -> {trace.final_mi!r} after {trace.iterations} iterations "
          f"({trace.stop_reason}); rounding gap {gap.gap!r}")
    return {
        "D1": {
            "initial_mi": trace.initial_mi,
            "final_mi": trace.final_mi,
            "iterations": trace.iterations,
            "phi": mat_to_csv(trace.phi),
            "binary_mi": gap.binary_mi,
            "rounding_gap": gap.gap,
        }
    }


def main():
    print("Freezing infograd golden fixtures")
    print("=" * 40)

    goldens = {}
    sections = (('sampling', sampling_goldens), ('information', information_goldens),
                ('gradients', gradient_goldens), ('bregman', bregman_goldens), ('design', design_goldens))
    for section, build in sections:
        print(f"\n{section}")
        try:
            goldens[section] = build()
        except Exception as e:
            print(f"  ✗ {section} failed: {e}")
            sys.exit(1)

    FIXTURE.parent.mkdir(parents=True, exist_ok=True)
    FIXTURE.write_text(json.dumps(goldens, indent=2, default=lambda v: np.asarray(v).tolist()) + '\n',
                       encoding='utf-8')
    print(f"\n✓ Wrote {FIXTURE}")


if __name__ == "__main__":
    main()
