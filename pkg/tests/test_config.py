import logging

import pytest

from shared.config import Settings
from shared.errors import FeasibilityError, NumericalError, ValidationError, exit_code_for


class TestSettings:
    def test_defaults(self, monkeypatch):
        for name in ('INFOGRAD_THREADS', 'INFOGRAD_SLAB_CELLS', 'INFOGRAD_LOG_LEVEL'):
            monkeypatch.delenv(name, raising=False)
        settings = Settings()
        assert settings.threads == 1
        assert settings.slab_cells == 65536
        assert settings.log_level == 'WARNING'

    def test_environment_overrides(self, monkeypatch):
        monkeypatch.setenv('INFOGRAD_THREADS', '4')
        monkeypatch.setenv('INFOGRAD_MC_BLOCK_SIZE', '')
        monkeypatch.setenv('INFOGRAD_LOG_LEVEL', 'debug')
        settings = Settings()
        assert settings.threads == 4
        assert settings.mc_block_size == 16384
        assert settings.log_level == 'DEBUG'

    @pytest.mark.parametrize('raw, message', [('many', 'integer'), ('0', '>= 1')])
    def test_bad_integer(self, monkeypatch, raw, message):
        monkeypatch.setenv('INFOGRAD_THREADS', raw)
        with pytest.raises(ValidationError, match=message):
            Settings()

    def test_explicit_threads_win(self, monkeypatch):
        monkeypatch.setenv('INFOGRAD_THREADS', '3')
        settings = Settings()
        assert settings.resolve_threads() == 3
        assert settings.resolve_threads(2) == 2
        with pytest.raises(ValidationError):
            settings.resolve_threads(0)

    def test_unknown_log_level_falls_back(self, monkeypatch):
        monkeypatch.setenv('INFOGRAD_LOG_LEVEL', 'chatty')
        assert getattr(logging, Settings().log_level, logging.WARNING) == logging.WARNING


class TestExitCodes:
    def test_error_families(self):
        assert exit_code_for(ValidationError('x')) == 2
        assert exit_code_for(FeasibilityError('x')) == 3
        assert exit_code_for(NumericalError('x')) == 3
        assert exit_code_for(RuntimeError('x')) == 1
