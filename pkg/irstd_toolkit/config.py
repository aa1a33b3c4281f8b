"""Environment and config-file handling."""

import json
import logging
import os
from pathlib import Path
from typing import TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

THREADS_ENV_VAR = "IRSTD_THREADS"

load_dotenv()


def _get_env_var(var_name: str, default: str | None = None, is_int: bool = False) -> str | int | None:
    value = os.getenv(var_name, default)
    if value is None or value == "":
        return None
    if is_int:
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"{var_name} must be a valid integer, got {value!r}")
    return value


def thread_count() -> int:
    """
    Number of worker threads batch operations may use.

    Reads ``IRSTD_THREADS``; 0 or unset means one worker per CPU.

    Returns:
        int: Worker count, always at least 1.
    """
    requested = _get_env_var(THREADS_ENV_VAR, is_int=True)
    if requested is None or requested == 0:
        return os.cpu_count() or 1
    if requested < 0:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 0, got {requested}")
    return requested


def load_config(path: str | Path, model: type[ModelT]) -> ModelT:
    """
    Load a JSON config file into a pydantic model.

    Args:
        path: JSON file whose keys mirror the model's fields.
        model: The pydantic model class to validate against.

    Returns:
        The validated model instance.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidArgumentError(f"Cannot read config {path}: {e}") from e
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        raise InvalidArgumentError(f"Invalid config {path}: {e}") from e
