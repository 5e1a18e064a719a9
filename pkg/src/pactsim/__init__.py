"""Deterministic simulator of a permissioned service-agreement chain.

Providers and consumers register on a public ledger kept by a small
set of validators, agree on services, and exchange confidential breach
reports through per-pair privacy groups whose payloads live only in
member enclaves while the chain anchors their hashes.  Runs are
discrete-event simulations on a virtual millisecond clock, fully
reproducible from a seed and a configuration.
"""

from .config import ConfigError, ScenarioConfig, config_from_dict, load_config, preset_dict
from .scenario import RunResult, run_scenario, run_sweep

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "config_from_dict",
    "load_config",
    "preset_dict",
    "RunResult",
    "run_scenario",
    "run_sweep",
]

__version__ = "0.1.0"
