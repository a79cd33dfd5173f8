"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Iterable

from .model import MarketScenario, check_scenario
from .scenario_io import load_scenario, loads_scenario, scenario_from_dict


def check_scenario_input(X: Any) -> MarketScenario:
    """Accept a scenario object, a schema dict, a JSON string or a file path."""
    if isinstance(X, MarketScenario):
        return check_scenario(X)
    if isinstance(X, dict):
        return scenario_from_dict(X)
    if isinstance(X, Path):
        return load_scenario(X)
    if isinstance(X, str):
        if X.lstrip().startswith("{"):
            return loads_scenario(X)
        return load_scenario(X)
    raise TypeError(f"expected a MarketScenario, dict, JSON string or path, got {type(X).__name__}")


def check_positive(name: str, value, allow_none: bool = False) -> None:
    if value is None and allow_none:
        return
    if value is None or not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


def check_nonnegative(name: str, value) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
        raise ValueError(f"{name} must be a nonnegative finite number, got {value!r}")


def check_choice(name: str, value, choices: Iterable) -> None:
    choices = tuple(choices)
    if value not in choices:
        raise ValueError(f"{name} must be one of {choices}, got {value!r}")
