import json

import numpy as np
import pytest
from scipy.optimize import minimize

from shared.errors import ValidationError
from shared.numerics import RngStream, write_csv
from infograd.design.projection import (
    Constraint,
    DesignOptions,
    DesignProblem,
    design_phi,
    project,
    round_to_binary,
    rounding_gap,
)
from infograd.estimators.information import MiMethod, mi_poisson_enum
from infograd.instances import d1, s1
from infograd.models.input_model import FiniteDistribution


def s1_problem(**kwargs):
    _, d = s1()
    return DesignProblem(prior=d, m=1, dark=np.array([0.5]), constraint=Constraint.parse('box01'), **kwargs)


def brute_force_row_sum(v, total):
    rows = []
    for row in v:
        result = minimize(lambda p: float(np.sum((p - row) ** 2)), np.full(row.shape, total / row.size),
                          jac=lambda p: 2.0 * (p - row), method='SLSQP', bounds=[(0.0, None)] * row.size,
                          constraints=[{'type': 'eq', 'fun': lambda p: p.sum() - total,
                                        'jac': lambda p: np.ones_like(p)}],
                          options={'ftol': 1e-15, 'maxiter': 500})
        rows.append(result.x)
    return np.array(rows)


class TestConstraints:
    def test_parse(self):
        assert Constraint.parse('box01') == Constraint('box01')
        assert Constraint.parse(' nonneg ') == Constraint('nonneg')
        assert Constraint.parse('row_sum(2.5)') == Constraint('row_sum', 2.5)
        assert str(Constraint.parse('row_sum(2)')) == 'row_sum(2.0)'

    @pytest.mark.parametrize('text', ['simplex', 'row_sum()', 'row_sum(x)', 'row_sum(-1)'])
    def test_parse_errors(self, text):
        with pytest.raises(ValidationError):
            Constraint.parse(text)

    def test_box_and_orthant(self):
        phi = np.array([[-0.5, 0.3], [1.7, 1.0]])
        np.testing.assert_array_equal(project(phi, Constraint('box01')), [[0.0, 0.3], [1.0, 1.0]])
        np.testing.assert_array_equal(project(phi, Constraint('nonneg')), [[0.0, 0.3], [1.7, 1.0]])

    def test_row_sum_matches_quadratic_program(self):
        stream = RngStream(13)
        for _ in range(5):
            v = 2.0 * stream.generator.standard_normal((3, 3))
            projected = project(v, Constraint('row_sum', 1.5))
            np.testing.assert_allclose(projected.sum(axis=1), 1.5, rtol=1e-14)
            assert projected.min() >= 0.0
            np.testing.assert_allclose(projected, brute_force_row_sum(v, 1.5), atol=1e-6)

    def test_row_sum_is_idempotent(self):
        v = np.array([[0.2, 0.3, 0.5], [3.0, -1.0, 0.0]])
        once = project(v, Constraint('row_sum', 1.0))
        np.testing.assert_allclose(project(once, Constraint('row_sum', 1.0)), once, atol=1e-15)
        np.testing.assert_allclose(once[0], [0.2, 0.3, 0.5], atol=1e-15)

    def test_zero_row_sum(self):
        np.testing.assert_array_equal(project([[0.4, -0.2]], Constraint('row_sum', 0.0)), [[0.0, 0.0]])


class TestDesignProblem:
    def test_scalar_dark_is_broadcast(self):
        problem = DesignProblem(prior=s1()[1], m=3, dark=np.array([0.2]), constraint=Constraint('box01'))
        np.testing.assert_array_equal(problem.dark, [0.2, 0.2, 0.2])
        assert problem.initial_phi().shape == (3, 1)

    def test_zero_dark_rejected(self):
        with pytest.raises(ValidationError, match='dark current must be positive'):
            DesignProblem(prior=s1()[1], m=1, dark=np.array([0.0]), constraint=Constraint('box01'))

    def test_dark_length(self):
        with pytest.raises(ValidationError, match='dark current has length'):
            DesignProblem(prior=s1()[1], m=3, dark=np.array([0.1, 0.1]), constraint=Constraint('box01'))

    def test_signed_prior_rejected(self):
        d = FiniteDistribution(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValidationError, match='nonnegative'):
            DesignProblem(prior=d, m=1, dark=np.array([0.1]), constraint=Constraint('box01'))

    def test_init_shape(self):
        with pytest.raises(ValidationError, match='init must have shape'):
            s1_problem(init=np.ones((2, 1)))

    def test_seeded_initialization_is_reproducible(self):
        problem = d1()
        np.testing.assert_array_equal(problem.initial_phi(), d1().initial_phi())
        assert np.all((problem.initial_phi() >= 0) & (problem.initial_phi() <= 1))

    def test_from_json_with_relative_files(self, tmp_path):
        _, d = s1()
        (tmp_path / 'prior.json').write_text(json.dumps(d.to_dict()))
        write_csv(tmp_path / 'init.csv', np.array([[0.25], [0.75]]))
        (tmp_path / 'problem.json').write_text(json.dumps({
            "prior": "prior.json", "m": 2, "dark": 0.3, "constraint": "row_sum(1)", "init": "init.csv"}))
        problem = DesignProblem.from_json(tmp_path / 'problem.json')
        assert problem.constraint == Constraint('row_sum', 1.0)
        np.testing.assert_array_equal(problem.dark, [0.3, 0.3])
        np.testing.assert_array_equal(problem.initial_phi(), [[1.0], [1.0]])

    def test_from_dict_missing_keys(self):
        with pytest.raises(ValidationError, match='missing m, dark'):
            DesignProblem.from_dict({"prior": {"atoms": [[1.0]], "probs": [1.0]}})

    def test_unreadable_problem(self, tmp_path):
        with pytest.raises(ValidationError, match='cannot read design problem'):
            DesignProblem.from_json(tmp_path / 'absent.json')


class TestDesignLoop:
    def test_scalar_box_design_opens_the_gain(self):
        trace = design_phi(s1_problem(init=np.array([[0.2]])))
        np.testing.assert_allclose(trace.phi, [[1.0]], atol=1e-9)
        assert trace.final_mi > trace.initial_mi
        assert trace.stop_reason in ('projected step is zero', 'relative gain below tol')

    def test_deterministic_prior_stops_immediately(self):
        d = FiniteDistribution.merged([[1.0, 1.0], [1.0, 1.0]], [0.5, 0.5])
        problem = DesignProblem(prior=d, m=2, dark=np.array([0.1]), constraint=Constraint('box01'))
        trace = design_phi(problem)
        assert len(trace.records) == 1
        assert trace.stop_reason == 'zero gradient'
        assert trace.iterations == 0

    def test_stationary_at_termination(self):
        opts = DesignOptions()
        trace = design_phi(s1_problem(init=np.array([[0.2]])), opts)
        last = trace.records[-1]
        assert last.accepted
        assert last.projected_gradient_norm <= 10 * opts.tol * (1 + abs(trace.final_mi))

    def test_zero_iterations(self):
        trace = design_phi(s1_problem(init=np.array([[0.2]])), DesignOptions(max_iters=0))
        assert trace.stop_reason == 'max_iters'
        np.testing.assert_array_equal(trace.phi, [[0.2]])

    def test_trace_serializes(self):
        trace = design_phi(s1_problem(init=np.array([[0.2]])), DesignOptions(max_iters=2))
        result = trace.to_dict()
        assert result["records"][0]["iteration"] == 0
        assert result["final_mi"] == trace.final_mi

    @pytest.mark.slow
    def test_topic_design_improves_information(self):
        trace = design_phi(d1())
        mi = trace.accepted_mi()
        assert all(b >= a for a, b in zip(mi, mi[1:]))
        assert trace.final_mi >= 1.10 * trace.initial_mi
        assert np.all((trace.phi >= 0) & (trace.phi <= 1))

    def test_monte_carlo_design_is_reproducible(self):
        opts = DesignOptions(max_iters=3, mi_method=MiMethod.MONTE_CARLO, budget=20000, seed=4)
        a = design_phi(s1_problem(init=np.array([[0.2]])), opts)
        b = design_phi(s1_problem(init=np.array([[0.2]])), opts)
        np.testing.assert_array_equal(a.phi, b.phi)
        assert 0.2 < float(a.phi[0, 0]) <= 1.0

    def test_options_validated(self):
        with pytest.raises(ValidationError, match='enumeration or Monte Carlo'):
            DesignOptions(mi_method=MiMethod.QUADRATURE)
        with pytest.raises(ValidationError, match='tol'):
            DesignOptions(tol=0.0)


class TestRounding:
    def test_threshold_is_inclusive(self):
        np.testing.assert_array_equal(round_to_binary([[0.5, 0.49], [1.0, 0.0]]), [[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(round_to_binary([[0.5, 0.7]], threshold=0.6), [[0.0, 1.0]])

    @pytest.mark.parametrize('threshold', [0.0, 1.0, 1.5])
    def test_threshold_range(self, threshold):
        with pytest.raises(ValidationError, match='threshold'):
            round_to_binary([[0.5]], threshold)

    def test_entries_must_be_in_the_box(self):
        with pytest.raises(ValidationError, match=r'\[0, 1\]'):
            round_to_binary([[1.2]])

    def test_rounding_gap(self):
        problem = s1_problem()
        gap = rounding_gap(problem, np.array([[0.7]]))
        np.testing.assert_array_equal(gap.binary_phi, [[1.0]])
        assert gap.binary_mi == mi_poisson_enum(problem.channel([[1.0]]), problem.prior).value
        assert gap.gap == pytest.approx(gap.relaxed_mi - gap.binary_mi)
        assert gap.to_dict()["binary_phi"].strip() == '1.0'
