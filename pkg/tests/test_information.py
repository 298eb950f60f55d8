import math

import numpy as np
import pytest
from scipy.stats import poisson

from shared.errors import FeasibilityError, ValidationError
from shared.numerics import RngStream
from infograd.estimators.inference import (
    conditional_mean,
    mmse_matrix,
    mmse_matrix_quadrature,
    posterior,
    posterior_from_logliks,
    posterior_table,
)
from infograd.estimators.information import MiMethod, mi_gaussian, mi_poisson, mi_poisson_enum, mi_poisson_mc
from infograd.instances import s1, v1, v1_gaussian
from infograd.models.channels import (
    GaussianChannel,
    PoissonChannel,
    build_output_grid,
    poisson_log_pmf,
    poisson_sample,
)
from infograd.models.input_model import FiniteDistribution, mean, sample_indices


def scalar_poisson_mi(phi, dark, values, probs, top=200):
    """Direct sum over y with scipy's pmf."""
    rates = [phi * v + dark for v in values]
    total = 0.0
    for y in range(top):
        conditional = [poisson.pmf(y, r) for r in rates]
        marginal = sum(p * c for p, c in zip(probs, conditional))
        total += sum(p * c * math.log(c / marginal) for p, c in zip(probs, conditional) if c > 0)
    return total


class TestPosterior:
    def test_bayes_rule(self):
        ch, d = v1()
        post = posterior(d, lambda atom: poisson_log_pmf(ch, atom, [2, 0]))
        joint = d.probs * np.exp([poisson_log_pmf(ch, atom, [2, 0]) for atom in d.atoms])
        np.testing.assert_allclose(post.weights, joint / joint.sum(), rtol=1e-13)

    def test_extreme_logliks_do_not_underflow(self):
        _, d = v1()
        post = posterior_from_logliks(d, [-1000.0, -1001.0, -2000.0])
        np.testing.assert_allclose(post.weights[:2], np.array([np.e, 1.0]) / (np.e + 1.0), rtol=1e-12)

    def test_output_outside_support(self):
        _, d = v1()
        with pytest.raises(ValidationError, match='support'):
            posterior_from_logliks(d, [-np.inf, -np.inf, -np.inf])

    def test_table_marks_unsupported_outputs(self):
        weights, log_py = posterior_table(np.log([0.5, 0.5]), np.array([[0.0, -np.inf], [-1.0, -np.inf]]))
        assert np.isneginf(log_py[1])
        np.testing.assert_array_equal(weights[1], [0.0, 0.0])
        assert weights[0].sum() == pytest.approx(1.0)

    def test_total_expectation_over_the_grid(self):
        ch, d = v1()
        grid = build_output_grid(ch, d, 1e-12)
        total = np.zeros(d.dim)
        mass = 0.0
        for y in grid.cells():
            logliks = [poisson_log_pmf(ch, atom, y) for atom in d.atoms]
            py = float(d.probs @ np.exp(logliks))
            total += py * conditional_mean(d, posterior_from_logliks(d, logliks))
            mass += py
        np.testing.assert_allclose(total / mass, mean(d), atol=1e-10)

    def test_total_expectation_by_sampling(self):
        ch, d = v1()
        stream = RngStream(29)
        atoms = d.atoms[sample_indices(d, stream, 5000)]
        outputs = poisson_sample(ch, atoms, stream)
        estimates = np.array([
            conditional_mean(d, posterior(d, lambda atom, y=y: poisson_log_pmf(ch, atom, y))) for y in outputs])
        std_error = estimates.std(axis=0, ddof=1) / np.sqrt(len(estimates))
        assert np.all(np.abs(estimates.mean(axis=0) - mean(d)) <= 3 * std_error)


class TestPoissonMutualInformation:
    def test_s1_against_direct_sum(self):
        ch, d = s1()
        estimate = mi_poisson_enum(ch, d)
        assert estimate.value == pytest.approx(scalar_poisson_mi(1.0, 0.5, [1.0, 3.0], [0.5, 0.5]), abs=1e-12)
        assert estimate.error_bound < 1e-10

    def test_deterministic_prior_has_zero_information(self):
        ch, _ = v1()
        d = FiniteDistribution.merged([[1.0, 1.0], [1.0, 1.0]], [0.5, 0.5])
        estimate = mi_poisson_enum(ch, d)
        assert abs(estimate.value) <= max(estimate.error_bound, 1e-15)

    def test_bounded_by_prior_entropy(self):
        ch, d = v1()
        entropy = -float(d.probs @ np.log(d.probs))
        assert 0 < mi_poisson_enum(ch, d).value < entropy

    def test_nondecreasing_in_gain(self):
        _, d = s1()
        values = [mi_poisson_enum(PoissonChannel([[phi]], [0.5]), d).value for phi in (0.5, 1.0, 2.0, 4.0)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_more_dark_current_less_information(self):
        ch, d = v1()
        assert mi_poisson_enum(ch.with_dark([0.5, 0.5]), d).value < mi_poisson_enum(ch, d).value

    def test_independent_of_slab_size_and_threads(self):
        ch, d = v1()
        reference = mi_poisson_enum(ch, d, slab_cells=10**6, threads=1).value
        sliced = mi_poisson_enum(ch, d, slab_cells=7, threads=3).value
        assert sliced == pytest.approx(reference, abs=1e-15)

    def test_monte_carlo_agrees_with_enumeration(self):
        ch, d = v1()
        exact = mi_poisson_enum(ch, d).value
        estimate = mi_poisson_mc(ch, d, 200000, RngStream(3))
        assert abs(estimate.value - exact) <= 5 * estimate.error_bound

    def test_monte_carlo_is_thread_independent(self):
        ch, d = v1()
        one = mi_poisson_mc(ch, d, 50000, RngStream(8), threads=1)
        four = mi_poisson_mc(ch, d, 50000, RngStream(8), threads=4)
        assert one.value == four.value

    def test_dispatch(self):
        ch, d = s1()
        assert mi_poisson(ch, d, MiMethod.ENUMERATION).method is MiMethod.ENUMERATION
        with pytest.raises(ValidationError, match='seed'):
            mi_poisson(ch, d, MiMethod.MONTE_CARLO)
        with pytest.raises(FeasibilityError, match='Gaussian'):
            mi_poisson(ch, d, MiMethod.QUADRATURE)

    def test_method_aliases(self):
        assert MiMethod.parse('enum') is MiMethod.ENUMERATION
        assert MiMethod.parse('mc') is MiMethod.MONTE_CARLO
        with pytest.raises(ValidationError):
            MiMethod.parse('exact')


class TestGaussianMutualInformation:
    def test_quadrature_error_is_labelled_an_estimate(self):
        ch, d = v1_gaussian()
        estimate = mi_gaussian(ch, d, MiMethod.QUADRATURE)
        assert estimate.error_kind == 'estimate'
        assert estimate.to_dict()["error_kind"] == 'estimate'
        assert mi_poisson_enum(*s1()).error_kind == 'bound'

    def test_quadrature_matches_monte_carlo(self):
        ch, d = v1_gaussian()
        quadrature = mi_gaussian(ch, d, MiMethod.QUADRATURE)
        estimate = mi_gaussian(ch, d, MiMethod.MONTE_CARLO, 200000, RngStream(5))
        assert abs(estimate.value - quadrature.value) <= 5 * estimate.error_bound + quadrature.error_bound

    def test_symmetric_binary_input(self):
        # X = +-1 through Y = aX + N: I = a^2 - E[log cosh(a^2 + a N)]
        a = 1.3
        ch = GaussianChannel([[a]])
        d = FiniteDistribution(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        nodes, weights = np.polynomial.hermite.hermgauss(120)
        expected = a * a - float(weights @ np.log(np.cosh(a * a + a * np.sqrt(2.0) * nodes))) / np.sqrt(np.pi)
        assert mi_gaussian(ch, d, MiMethod.QUADRATURE, 120).value == pytest.approx(expected, abs=1e-10)

    def test_deterministic_prior(self):
        ch = GaussianChannel([[1.0, 2.0]])
        d = FiniteDistribution(np.array([[1.0, -1.0]]), np.array([1.0]))
        assert mi_gaussian(ch, d, MiMethod.MONTE_CARLO, 10, RngStream(0)).value == 0.0

    def test_quadrature_needs_small_m(self):
        ch = GaussianChannel(np.eye(3))
        d = FiniteDistribution(np.eye(3), np.full(3, 1.0 / 3.0))
        with pytest.raises(FeasibilityError, match='mc'):
            mi_gaussian(ch, d, MiMethod.QUADRATURE)


class TestMmse:
    def test_monte_carlo_matches_quadrature(self):
        ch, d = v1_gaussian()
        estimate = mmse_matrix(ch, d, 200000, RngStream(6))
        reference = mmse_matrix_quadrature(ch, d, 40)
        assert np.all(np.abs(estimate.matrix - reference) <= 5 * estimate.std_error + 1e-12)

    def test_symmetric_and_psd(self):
        ch, d = v1_gaussian()
        matrix = mmse_matrix_quadrature(ch, d)
        np.testing.assert_array_equal(matrix, matrix.T)
        assert np.linalg.eigvalsh(matrix).min() >= -1e-12

    def test_noiseless_limit(self):
        # a huge gain makes the atoms perfectly distinguishable
        _, d = v1_gaussian()
        ch = GaussianChannel(np.eye(2) * 50.0)
        np.testing.assert_allclose(mmse_matrix_quadrature(ch, d), np.zeros((2, 2)), atol=1e-12)

    def test_sample_count(self):
        with pytest.raises(ValidationError):
            mmse_matrix(*v1_gaussian(), 0, RngStream(0))
