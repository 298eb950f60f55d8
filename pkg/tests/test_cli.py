import hashlib
import json

import numpy as np
import pytest

from cli.app import run
from shared.ecs_logger import run_logger
from shared.numerics import mat_from_csv, write_csv
from infograd.estimators.gradients import grad_poisson
from infograd.estimators.information import mi_poisson_enum
from infograd.instances import s1, v1, write_instance


@pytest.fixture
def v1_files(tmp_path):
    return write_instance('V1', tmp_path / 'v1')


@pytest.fixture
def s1_files(tmp_path):
    return write_instance('S1', tmp_path / 's1')


def report_of(capsys):
    return json.loads(capsys.readouterr().out)


class TestMi:
    def test_enumeration_report(self, s1_files, capsys):
        code = run(['mi', '--channel', str(s1_files['channel']), '--input', str(s1_files['prior'])])
        assert code == 0
        report = report_of(capsys)
        ch, d = s1()
        assert report["command"] == 'mi'
        assert report["outputs"]["method"] == 'enumeration'
        assert report["outputs"]["value"] == mi_poisson_enum(ch, d).value
        digest = hashlib.sha256(s1_files['channel'].read_bytes()).hexdigest()
        assert report["inputs"]["channel"]["sha256"] == digest
        assert "wall_clock_ms" in report["timing"]

    def test_gaussian_quadrature(self, tmp_path, capsys):
        paths = write_instance('V1-Gaussian', tmp_path)
        assert run(['mi', '--channel', str(paths['channel']), '--input', str(paths['prior']), '--method', 'quad']) == 0
        assert report_of(capsys)["outputs"]["channel"] == 'gaussian'

    def test_monte_carlo_depends_only_on_seed(self, v1_files, capsys):
        argv = ['mi', '--channel', str(v1_files['channel']), '--input', str(v1_files['prior']),
                '--method', 'mc', '--budget', '5000', '--seed', '3']
        assert run(argv) == 0
        first = report_of(capsys)
        assert run(argv) == 0
        second = report_of(capsys)
        assert first["outputs"] == second["outputs"]

    def test_quadrature_on_poisson_is_infeasible(self, s1_files):
        code = run(['mi', '--channel', str(s1_files['channel']), '--input', str(s1_files['prior']), '--method', 'quad'])
        assert code == 3

    def test_missing_input_file(self, s1_files, tmp_path):
        assert run(['mi', '--channel', str(s1_files['channel']), '--input', str(tmp_path / 'none.json')]) == 2

    def test_report_file(self, s1_files, tmp_path):
        out = tmp_path / 'report.json'
        assert run(['mi', '--channel', str(s1_files['channel']), '--input', str(s1_files['prior']),
                    '--out', str(out)]) == 0
        assert json.loads(out.read_text())["seed"] == 0


class TestGrad:
    def test_theorem_gradient_is_bit_exact_csv(self, v1_files, capsys):
        assert run(['grad', '--channel', str(v1_files['channel']), '--input', str(v1_files['prior']),
                    '--wrt', 'both']) == 0
        outputs = report_of(capsys)["outputs"]
        ch, d = v1()
        exact = grad_poisson(ch, d)
        np.testing.assert_array_equal(mat_from_csv(outputs["grad_phi"]), exact.grad_phi)
        assert "grad_dark" in outputs

    def test_zero_dark_current_is_a_usage_error(self, tmp_path, v1_files, capsys):
        channel = tmp_path / 'dark0.json'
        channel.write_text(json.dumps({"type": "poisson", "phi": [[1.0, 0.5], [0.2, 1.0]], "dark": [0.1, 0.0]}))
        code = run(['grad', '--channel', str(channel), '--input', str(v1_files['prior']), '--wrt', 'dark'])
        assert code == 2
        assert 'dark current must be positive' in capsys.readouterr().err

    def test_finite_differences_take_one_parameter(self, v1_files):
        assert run(['grad', '--channel', str(v1_files['channel']), '--input', str(v1_files['prior']),
                    '--method', 'fd', '--wrt', 'both']) == 2

    def test_monte_carlo_dark_only(self, v1_files, capsys):
        assert run(['grad', '--channel', str(v1_files['channel']), '--input', str(v1_files['prior']),
                    '--method', 'mc', '--wrt', 'dark', '--budget', '2000']) == 0
        outputs = report_of(capsys)["outputs"]
        assert "grad_phi" not in outputs
        assert outputs["samples"] == 2000

    def test_gaussian_dark_rejected(self, tmp_path):
        paths = write_instance('V1-Gaussian', tmp_path)
        assert run(['grad', '--channel', str(paths['channel']), '--input', str(paths['prior']), '--wrt', 'dark']) == 2


class TestBregman:
    def test_catalog_generator(self, tmp_path, capsys):
        (tmp_path / 'x.csv').write_text('1.0\n2.0\n')
        (tmp_path / 'y.csv').write_text('0.0\n0.0\n')
        assert run(['bregman', '--generator', 'squared_norm', '--x', str(tmp_path / 'x.csv'),
                    '--y', str(tmp_path / 'y.csv')]) == 0
        outputs = report_of(capsys)["outputs"]
        assert mat_from_csv(outputs["divergence"])[0, 0] == 5.0

    def test_poisson_generator_needs_channel(self, tmp_path):
        write_csv(tmp_path / 'x.csv', np.array([[1.0], [1.0]]))
        assert run(['bregman', '--generator', 'poisson', '--x', str(tmp_path / 'x.csv'),
                    '--y', str(tmp_path / 'x.csv')]) == 2

    def test_poisson_generator_matrix(self, tmp_path, v1_files, capsys):
        write_csv(tmp_path / 'x.csv', np.array([[1.0], [0.0]]))
        write_csv(tmp_path / 'y.csv', np.array([[0.6], [0.6]]))
        assert run(['bregman', '--generator', 'poisson', '--x', str(tmp_path / 'x.csv'),
                    '--y', str(tmp_path / 'y.csv'), '--channel', str(v1_files['channel'])]) == 0
        outputs = report_of(capsys)["outputs"]
        assert outputs["shape"] == [2, 2]
        assert mat_from_csv(outputs["divergence"]).shape == (2, 2)

    def test_unknown_generator(self, tmp_path):
        (tmp_path / 'x.csv').write_text('1.0\n')
        assert run(['bregman', '--generator', 'hinge', '--x', str(tmp_path / 'x.csv'),
                    '--y', str(tmp_path / 'x.csv')]) == 2


class TestDesign:
    def test_writes_phi_trace_and_report(self, tmp_path, s1_files):
        problem = tmp_path / 'problem.json'
        problem.write_text(json.dumps({"prior": str(s1_files['prior']), "m": 1, "dark": 0.5,
                                       "constraint": "box01", "init": [[0.2]]}))
        phi_path = tmp_path / 'phi.csv'
        trace_path = tmp_path / 'trace.json'
        report_path = tmp_path / 'report.json'
        code = run(['design', '--problem', str(problem), '--out', str(phi_path), '--trace', str(trace_path),
                    '--report', str(report_path), '--threshold', '0.5'])
        assert code == 0
        np.testing.assert_allclose(mat_from_csv(phi_path.read_text()), [[1.0]], atol=1e-9)
        trace = json.loads(trace_path.read_text())
        assert trace["records"][0]["iteration"] == 0
        outputs = json.loads(report_path.read_text())["outputs"]
        assert outputs["final_mi"] >= outputs["initial_mi"]
        assert "rounding" in outputs


class TestVerify:
    @pytest.mark.slow
    def test_bregman_suite_passes(self, capsys):
        assert run(['verify', '--suite', 'bregman', '--seed', '0']) == 0
        outputs = report_of(capsys)["outputs"]
        assert outputs["passed"]
        assert outputs["failures"] == []

    @pytest.mark.slow
    def test_all_suites_are_byte_identical_across_runs(self, capsys):
        sections = []
        for _ in range(2):
            assert run(['verify', '--suite', 'all', '--seed', '7']) == 0
            report = report_of(capsys)
            sections.append(json.dumps({key: report[key] for key in ('argv', 'seed', 'outputs')}, sort_keys=True))
        assert sections[0] == sections[1]


class TestUsage:
    def test_unknown_flag(self):
        assert run(['mi', '--bogus']) == 2

    def test_missing_subcommand(self):
        assert run([]) == 2

    def test_help_exits_cleanly(self):
        assert run(['--help']) == 0


class TestEventLog:
    def test_run_is_bracketed_by_start_and_complete(self, s1_files, event_log):
        assert run(['mi', '--channel', str(s1_files['channel']), '--input', str(s1_files['prior'])]) == 0
        events = [json.loads(line) for line in event_log.read_text().splitlines()]
        assert events[0]["event"]["action"] == 'run_start'
        assert events[-1]["event"]["action"] == 'run_complete'
        assert events[-1]["infograd"]["exit_code"] == 0
        assert events[0]["infograd"]["run_id"] == events[-1]["infograd"]["run_id"]

    def test_failures_are_logged(self, s1_files, event_log):
        run(['mi', '--channel', str(s1_files['channel']), '--input', str(s1_files['prior']), '--method', 'quad'])
        events = [json.loads(line) for line in event_log.read_text().splitlines()]
        assert any(e["event"]["outcome"] == 'failure' and e["event"]["action"] != 'run_complete' for e in events)
        assert events[-1]["infograd"]["exit_code"] == 3

    def test_input_digests_and_run_context(self, s1_files, event_log):
        assert run(['mi', '--channel', str(s1_files['channel']), '--input', str(s1_files['prior']),
                    '--seed', '5']) == 0
        events = [json.loads(line) for line in event_log.read_text().splitlines()]
        assert all(e["infograd"]["command"] == 'mi' and e["infograd"]["seed"] == 5 for e in events)
        hashed = next(e for e in events if e["event"]["action"] == 'inputs_hashed')
        files = {item["role"]: item["file"] for item in hashed["infograd"]["inputs"]}
        digest = hashlib.sha256(s1_files['prior'].read_bytes()).hexdigest()
        assert files["input"]["hash"]["sha256"] == digest
        assert events[0]["process"]["args"][1] == 'mi'

    def test_unwritable_log_is_reported_once(self, s1_files, monkeypatch, tmp_path, caplog):
        monkeypatch.setattr(run_logger, 'log_file', str(tmp_path / 'missing' / 'events.json'))
        monkeypatch.setattr(run_logger, '_write_failed', False)
        assert run(['mi', '--channel', str(s1_files['channel']), '--input', str(s1_files['prior'])]) == 0
        warnings = [r for r in caplog.records if 'not writable' in r.getMessage()]
        assert len(warnings) == 1

    @pytest.mark.slow
    def test_verification_events_carry_the_suite(self, event_log):
        assert run(['verify', '--suite', 'bregman']) == 0
        events = [json.loads(line) for line in event_log.read_text().splitlines()]
        checks = [e for e in events if e["event"]["action"] == 'verification_check']
        assert checks
        assert all(e["infograd"]["suite"] == 'bregman' for e in checks)
        assert {'name', 'metric', 'tolerance', 'informational'} <= set(checks[0]["infograd"]["check"])
