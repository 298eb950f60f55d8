import json
from pathlib import Path

import pytest

from shared.ecs_logger import run_logger

FIXTURES = Path(__file__).parent / 'fixtures'


@pytest.fixture(autouse=True)
def event_log(tmp_path, monkeypatch):
    """Keep ECS events of CLI runs out of the working directory."""
    path = tmp_path / 'events.json'
    monkeypatch.setattr(run_logger, 'log_file', str(path))
    return path


def _load_fixture(name: str, hint: str):
    path = FIXTURES / name
    if not path.exists():
        pytest.fail(f'missing tests/fixtures/{name}; {hint}', pytrace=False)
    return json.loads(path.read_text(encoding='utf-8'))


@pytest.fixture(scope='session')
def goldens():
    """Values frozen from this package by freeze_goldens.py."""
    return _load_fixture('goldens.json', 'run python freeze_goldens.py and commit the result')


@pytest.fixture(scope='session')
def references():
    """Values computed independently of this package."""
    return _load_fixture('references.json', 'restore it from version control')
