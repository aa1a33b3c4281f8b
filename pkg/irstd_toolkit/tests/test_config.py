import os

import pytest
from pydantic import BaseModel

from irstd_toolkit.config import THREADS_ENV_VAR, load_config, thread_count
from irstd_toolkit.errors import InvalidArgumentError


class _Settings(BaseModel):
    k: float = 3.0
    name: str = "mpcm"


def test_thread_count_defaults_to_cpu_count(monkeypatch):
    monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
    assert thread_count() == (os.cpu_count() or 1)
    monkeypatch.setenv(THREADS_ENV_VAR, "0")
    assert thread_count() == (os.cpu_count() or 1)


def test_thread_count_reads_environment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    assert thread_count() == 3


@pytest.mark.parametrize("value", ["-1", "many"])
def test_thread_count_rejects_bad_values(monkeypatch, value):
    monkeypatch.setenv(THREADS_ENV_VAR, value)
    with pytest.raises(ValueError):
        thread_count()


def test_load_config(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text('{"k": 2.5}')
    settings = load_config(path, _Settings)
    assert settings.k == 2.5
    assert settings.name == "mpcm"


def test_load_config_wraps_errors(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{")
    with pytest.raises(InvalidArgumentError):
        load_config(bad_json, _Settings)
    wrong_type = tmp_path / "wrong.json"
    wrong_type.write_text('{"k": "high"}')
    with pytest.raises(InvalidArgumentError):
        load_config(wrong_type, _Settings)
    with pytest.raises(InvalidArgumentError):
        load_config(tmp_path / "missing.json", _Settings)
