import numpy as np
import pytest

from shared.errors import NumericalError, ValidationError
from shared.numerics import RngStream
from infograd.estimators.gradients import (
    FdScheme,
    FdTarget,
    GradientMethod,
    GradientReport,
    grad_dark_poisson,
    grad_fd,
    grad_fd_matrix,
    grad_gaussian_fd_matrix,
    grad_phi_gaussian,
    grad_phi_poisson,
    grad_phi_poisson_mc,
    grad_poisson,
    scalar_poisson_derivatives,
)
from infograd.evaluators.equivalence import dark_gradient_identity
from infograd.instances import s1, v1, v1_gaussian
from infograd.models.channels import PoissonChannel
from infograd.models.input_model import FiniteDistribution


def relative_error(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))


class TestEnumeratedGradient:
    def test_s1_matches_finite_differences(self):
        ch, d = s1()
        report = grad_poisson(ch, d)
        assert relative_error(report.grad_phi, grad_fd_matrix(ch, d, 'phi').grad_phi) <= 1e-5
        assert relative_error(report.grad_dark, grad_fd_matrix(ch, d, 'dark').grad_dark) <= 1e-5

    def test_v1_matches_finite_differences(self):
        ch, d = v1()
        report = grad_poisson(ch, d)
        assert relative_error(report.grad_phi, grad_fd_matrix(ch, d, 'phi').grad_phi) <= 1e-4
        assert relative_error(report.grad_dark, grad_fd_matrix(ch, d, 'dark').grad_dark) <= 1e-4

    def test_error_bounds_are_small(self):
        ch, d = v1()
        report = grad_poisson(ch, d, epsilon=1e-12)
        assert report.deficit <= 1e-12
        assert report.error.max() < 1e-8
        assert report.error.shape == report.grad_phi.shape

    def test_single_parameter_entry_points(self):
        ch, d = v1()
        both = grad_poisson(ch, d)
        phi_only = grad_phi_poisson(ch, d)
        dark_only = grad_dark_poisson(ch, d)
        assert phi_only.grad_dark is None
        assert dark_only.grad_phi is None
        np.testing.assert_array_equal(phi_only.grad_phi, both.grad_phi)
        np.testing.assert_array_equal(dark_only.grad_dark, both.grad_dark)

    def test_zero_dark_current_rejected(self):
        ch = PoissonChannel([[1.0, 0.5], [0.2, 1.0]], [0.1, 0.0])
        _, d = v1()
        with pytest.raises(ValidationError, match=r'dark current must be positive.*dark\[1\]'):
            grad_poisson(ch, d)

    def test_deterministic_prior_has_zero_gradient(self):
        ch, _ = v1()
        d = FiniteDistribution.merged([[1.0, 1.0]], [1.0])
        report = grad_poisson(ch, d)
        np.testing.assert_allclose(report.grad_phi, np.zeros((2, 2)), atol=1e-12)
        np.testing.assert_allclose(report.grad_dark, np.zeros(2), atol=1e-12)

    @pytest.mark.parametrize('instance', [s1, v1])
    def test_dark_gradient_splits_into_log_rate_expectations(self, instance):
        ch, d = instance()
        identity = dark_gradient_identity(ch, d)
        assert identity.passed, identity.max_abs_difference
        np.testing.assert_allclose(identity.log_rate, identity.terms.dark_prior, rtol=0, atol=1e-10)
        np.testing.assert_allclose(identity.log_conditional_rate, identity.terms.dark_posterior, rtol=0, atol=1e-10)
        np.testing.assert_allclose(identity.log_rate - identity.log_conditional_rate, grad_poisson(ch, d).grad_dark,
                                   rtol=0, atol=1e-10)

    def test_dark_identity_needs_positive_dark(self):
        ch = PoissonChannel([[1.0]], [0.0])
        _, d = s1()
        with pytest.raises(ValidationError, match='dark current must be positive'):
            dark_gradient_identity(ch, d)

    def test_independent_of_thread_count(self):
        ch, d = v1()
        np.testing.assert_allclose(grad_poisson(ch, d, threads=1).grad_phi,
                                   grad_poisson(ch, d, threads=4).grad_phi, rtol=1e-13)


class TestMonteCarloGradient:
    def test_agrees_with_enumeration(self):
        ch, d = v1()
        exact = grad_poisson(ch, d)
        estimate = grad_phi_poisson_mc(ch, d, 200000, RngStream(12))
        assert estimate.samples == 200000
        assert np.all(np.abs(estimate.grad_phi - exact.grad_phi) <= 5 * estimate.error + 1e-12)
        assert np.all(np.abs(estimate.grad_dark - exact.grad_dark) <= 5 * estimate.dark_error + 1e-12)

    def test_deterministic_prior_cancels_per_sample(self):
        ch, _ = v1()
        d = FiniteDistribution.merged([[1.0, 0.0]], [1.0])
        estimate = grad_phi_poisson_mc(ch, d, 1000, RngStream(0))
        np.testing.assert_array_equal(estimate.grad_phi, np.zeros((2, 2)))

    def test_reproducible(self):
        ch, d = s1()
        a = grad_phi_poisson_mc(ch, d, 5000, RngStream(4), threads=1)
        b = grad_phi_poisson_mc(ch, d, 5000, RngStream(4), threads=3)
        np.testing.assert_array_equal(a.grad_phi, b.grad_phi)


class TestGaussianGradient:
    def test_mmse_gradient_matches_quadrature_differences(self):
        ch, d = v1_gaussian()
        estimate = grad_phi_gaussian(ch, d, 200000, RngStream(21))
        reference = grad_gaussian_fd_matrix(ch, d)
        assert estimate.method is GradientMethod.GAUSSIAN_MMSE
        assert np.all(np.abs(estimate.grad_phi - reference.grad_phi) <= 5 * estimate.error + 1e-6)

    def test_gaussian_has_no_dark_gradient(self):
        ch, d = v1_gaussian()
        with pytest.raises(ValidationError, match='no dark current'):
            grad_fd_matrix(ch, d, 'dark')


class TestFiniteDifferences:
    def test_target_parse(self):
        assert FdTarget.parse('phi:1,0') == FdTarget.phi_entry(1, 0)
        assert FdTarget.parse('dark:1') == FdTarget.dark_entry(1)
        for text in ('phi:1', 'dark:a', 'gain:0'):
            with pytest.raises(ValidationError, match='phi:i,j'):
                FdTarget.parse(text)

    def test_target_outside_channel(self):
        ch, d = s1()
        with pytest.raises(ValidationError, match='outside shape'):
            grad_fd(ch, d, FdTarget.phi_entry(0, 3))

    def test_explicit_central_leaves_domain(self):
        ch, d = s1()
        ch = ch.with_dark([1e-5])
        with pytest.raises(ValidationError, match='forward scheme'):
            grad_fd(ch, d, FdTarget.dark_entry(0), h=1e-4, scheme=FdScheme.CENTRAL)

    def test_auto_scheme_goes_forward_near_zero(self):
        ch, d = s1()
        ch = ch.with_dark([1e-4])
        target = FdTarget.dark_entry(0)
        auto = grad_fd(ch, d, target, h=1e-4)
        forward = grad_fd(ch, d, target, h=1e-4, scheme='forward')
        assert auto == forward
        assert relative_error(auto, grad_poisson(ch, d).grad_dark[0]) <= 1e-3

    def test_evaluation_error_bounds_collected(self):
        ch, d = s1()
        errors = []
        grad_fd(ch, d, FdTarget.phi_entry(0, 0), errors=errors)
        assert len(errors) == 2
        assert max(errors) < 1e-10

    def test_bad_wrt(self):
        ch, d = s1()
        with pytest.raises(ValidationError, match='wrt'):
            grad_fd_matrix(ch, d, 'both')


class TestScalarReference:
    def test_scalar_loops_match_vector_path(self):
        ch, d = s1()
        dphi, ddark = scalar_poisson_derivatives(1.0, 0.5, [1.0, 3.0], [0.5, 0.5])
        report = grad_poisson(ch, d)
        assert dphi == pytest.approx(report.grad_phi[0, 0], abs=1e-12)
        assert ddark == pytest.approx(report.grad_dark[0], abs=1e-12)

    def test_scalar_truncation_does_not_use_the_vector_grid(self, monkeypatch):
        def no_grid(*args, **kwargs):
            raise AssertionError('vector grid used')

        monkeypatch.setattr('infograd.estimators.gradients.build_output_grid', no_grid)
        dphi, ddark = scalar_poisson_derivatives(1.0, 0.5, [1.0, 3.0], [0.5, 0.5])
        assert dphi == pytest.approx(0.17625134541516951, abs=1e-11)
        assert ddark == pytest.approx(-0.062624248657786818, abs=1e-11)

    def test_scalar_needs_positive_dark(self):
        with pytest.raises(ValidationError, match='dark current must be positive'):
            scalar_poisson_derivatives(1.0, 0.0, [1.0, 3.0], [0.5, 0.5])


class TestReport:
    def test_method_aliases(self):
        assert GradientMethod.parse('fd') is GradientMethod.FINITE_DIFFERENCE
        assert GradientMethod.parse('theorem') is GradientMethod.THEOREM
        with pytest.raises(ValidationError, match='theorem, fd or mc'):
            GradientMethod.parse('adjoint')

    def test_non_finite_entries_rejected(self):
        with pytest.raises(NumericalError, match='grad_phi'):
            GradientReport(grad_phi=np.array([[np.nan]]), grad_dark=None,
                           method=GradientMethod.THEOREM, channel_kind='poisson')

    def test_to_dict_uses_csv_text(self):
        ch, d = s1()
        result = grad_poisson(ch, d).to_dict()
        assert result["method"] == 'theorem'
        assert float(result["grad_phi"]) == grad_poisson(ch, d).grad_phi[0, 0]
