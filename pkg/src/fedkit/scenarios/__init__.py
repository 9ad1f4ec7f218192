"""Bundled demo scenarios, including the two-site 70 km federation demo.

The link profile (base 15 ms, +/-5 ms jitter, 0.1% loss) is a plausible
default for two labs 70 km apart, not a measured value.
"""

from importlib import resources
from pathlib import Path

from ..experiment import Experiment, Registry, parse_experiment

_NAMES = ("demo_twosite", "demo_staged", "demo_wr", "sites_demo")


def list_scenarios() -> list[str]:
    return [n for n in _NAMES if n != "sites_demo"]


def scenario_text(name: str) -> str:
    if name not in _NAMES:
        raise KeyError(f"unknown scenario {name!r}; choose from {_NAMES}")
    return resources.files(__package__).joinpath(f"{name}.json").read_text(encoding="utf-8")


def scenario_path(name: str) -> Path:
    if name not in _NAMES:
        raise KeyError(f"unknown scenario {name!r}; choose from {_NAMES}")
    return Path(str(resources.files(__package__).joinpath(f"{name}.json")))


def load_scenario(name: str, registry: Registry | None = None) -> Experiment:
    return parse_experiment(scenario_text(name), registry)
