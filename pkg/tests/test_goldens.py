import numpy as np
import pytest

from shared.numerics import RngStream, mat_from_csv
from infograd.design.projection import design_phi, rounding_gap
from infograd.estimators.gradients import grad_poisson
from infograd.estimators.information import MiMethod, mi_gaussian, mi_poisson_enum
from infograd.evaluators.minimizer import OutcomeSpace, Partition, minimizer_check
from infograd.evaluators.properties import check_properties
from infograd.generators.matrix import poisson_generator
from infograd.instances import d1, s1, v1, v1_gaussian, v1_prior
from infograd.models.channels import PoissonChannel, poisson_sample
from infograd.models.input_model import sample

POISSON_INSTANCES = [('S1', s1), ('V1', v1)]


class TestReferenceValues:
    @pytest.mark.parametrize('name, instance', POISSON_INSTANCES)
    def test_enumerated_information(self, references, name, instance):
        ch, d = instance()
        estimate = mi_poisson_enum(ch, d)
        assert estimate.value == pytest.approx(references["information"][name]["mi"], abs=1e-11)

    def test_gaussian_quadrature(self, references):
        ch, d = v1_gaussian()
        value = mi_gaussian(ch, d, MiMethod.QUADRATURE).value
        assert value == pytest.approx(references["information"]["V1-Gaussian"]["mi"], abs=1e-8)

    @pytest.mark.parametrize('name, instance', POISSON_INSTANCES)
    def test_gradients(self, references, name, instance):
        ch, d = instance()
        report = grad_poisson(ch, d)
        expected = references["gradients"][name]
        np.testing.assert_allclose(report.grad_phi, expected["grad_phi"], rtol=0, atol=1e-11)
        np.testing.assert_allclose(report.grad_dark, expected["grad_dark"], rtol=0, atol=1e-11)

    def test_scalar_gain_sweep(self, references):
        sweep = references["scalar_gain_sweep"]
        _, d = s1()
        values = [mi_poisson_enum(PoissonChannel([[phi]], [sweep["dark"]]), d).value for phi in sweep["phi"]]
        np.testing.assert_allclose(values, sweep["mi"], rtol=0, atol=1e-11)


class TestFrozenGoldens:
    def test_sampler_sequences(self, goldens):
        expected = goldens["sampling"]["V1"]
        stream = RngStream(expected["seed"])
        np.testing.assert_array_equal([sample(v1_prior(), stream) for _ in range(5)], expected["atoms"])
        ch, _ = v1()
        stream = RngStream(expected["seed"])
        np.testing.assert_array_equal([poisson_sample(ch, [1.0, 1.0], stream) for _ in range(5)],
                                      expected["outputs"])

    @pytest.mark.parametrize('name, instance', POISSON_INSTANCES)
    def test_enumerated_information(self, goldens, name, instance):
        ch, d = instance()
        assert mi_poisson_enum(ch, d).value == pytest.approx(goldens["information"][name]["mi"], abs=1e-13)

    def test_gaussian_quadrature(self, goldens):
        ch, d = v1_gaussian()
        value = mi_gaussian(ch, d, MiMethod.QUADRATURE).value
        assert value == pytest.approx(goldens["information"]["V1-Gaussian"]["mi"], abs=1e-12)

    @pytest.mark.parametrize('name, instance', POISSON_INSTANCES)
    def test_gradients(self, goldens, name, instance):
        ch, d = instance()
        report = grad_poisson(ch, d)
        expected = goldens["gradients"][name]
        np.testing.assert_allclose(report.grad_phi, mat_from_csv(expected["grad_phi"]), rtol=1e-12)
        np.testing.assert_allclose(report.grad_dark, mat_from_csv(expected["grad_dark"]).ravel(), rtol=1e-12)

    def test_poisson_generator_findings(self, goldens):
        expected = goldens["bregman"]["poisson_generator_v1"]
        ch, d = v1()
        g = poisson_generator(ch.phi, ch.dark)
        properties = check_properties(g, trials=10000, rng=RngStream(7))
        space = OutcomeSpace.from_channel(ch, d)
        minimizer = minimizer_check(g, space, Partition.by_output_parity(space, 0), 10000, RngStream(7, 1))
        assert properties.nonnegativity_violations == expected["nonnegativity_violations"]
        assert properties.convexity_violations == expected["convexity_violations"]
        assert minimizer.dominating == expected["parity_dominating"]

    @pytest.mark.slow
    def test_design(self, goldens):
        problem = d1()
        trace = design_phi(problem)
        expected = goldens["design"]["D1"]
        assert trace.iterations == expected["iterations"]
        assert trace.initial_mi == pytest.approx(expected["initial_mi"], rel=1e-12)
        assert trace.final_mi == pytest.approx(expected["final_mi"], rel=1e-10)
        np.testing.assert_allclose(trace.phi, mat_from_csv(expected["phi"]), atol=1e-9)
        gap = rounding_gap(problem, trace.phi)
        assert gap.binary_mi == pytest.approx(expected["binary_mi"], rel=1e-10)
        assert gap.gap == pytest.approx(expected["rounding_gap"], abs=1e-10)
