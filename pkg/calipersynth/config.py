import os
import json
import logging
from typing import Any, Dict, Optional

from dotenv import find_dotenv, load_dotenv

from .errors import ConfigError

CONFIG_ENV_VAR = 'CSM_CONFIG'
LOG_LEVEL_ENV_VAR = 'CSM_LOG_LEVEL'
WORKERS_ENV_VAR = 'CSM_WORKERS'
DEFAULT_CONFIG_NAME = 'csm.json'


def get_default_config() -> Dict[str, Any]:
    """Get default configuration settings."""
    return {
        # caliper
        "bins": 5,
        "binary_pi": 0.001,
        "c": 1.0,
        "alpha": 1.0,
        "policy": "fixed",
        "norm": "linf",
        "k_min": 1,
        "k_max": 5,
        # weighting and estimation
        "scheme": "scm",
        "subset": "feasible",
        "level": 0.95,
        "tol": 1e-8,
        "max_iter": 10000,
        # diagnostics
        "histogram_bins": 30,
        "top_k": 3,
        # simulation
        "trials_coverage": 500,
        "trials_compare": 250,
        "seed": 20240101,
        "overlap_fractions": {
            "very_low": 100 / 550,
            "low": 0.375,
            "medium": 0.55,
            "high": 0.725,
            "very_high": 0.9
        },
        # runtime
        "workers": 1,
        "out_dir": "csm_out",
        "log_level": "WARNING"
    }


def _read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Error loading config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    return data


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Load configuration, merging the first config file found over the defaults.

    Lookup order: explicit path, the CSM_CONFIG environment variable (a .env
    file in the working directory is honored), csm.json in the working
    directory. Environment overrides for workers and log level apply last.
    """
    load_dotenv(find_dotenv(usecwd=True))
    defaults = get_default_config()

    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if path is None and os.path.exists(DEFAULT_CONFIG_NAME):
            path = DEFAULT_CONFIG_NAME

    loaded: Dict[str, Any] = {}
    if path is not None:
        loaded = _read_json(path)
        logging.debug(f"Loaded config from {path}")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")

    config = {**defaults, **loaded}
    if 'overlap_fractions' in loaded:
        config['overlap_fractions'] = {**defaults['overlap_fractions'], **loaded['overlap_fractions']}

    if os.environ.get(WORKERS_ENV_VAR):
        try:
            config['workers'] = int(os.environ[WORKERS_ENV_VAR])
        except ValueError as e:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer") from e
    if os.environ.get(LOG_LEVEL_ENV_VAR):
        config['log_level'] = os.environ[LOG_LEVEL_ENV_VAR]

    return config


def get_setting(config: Dict[str, Any], key: str) -> Any:
    """Get a setting, falling back to its default."""
    if key in config:
        return config[key]
    defaults = get_default_config()
    if key not in defaults:
        raise ConfigError(f"Unknown setting: {key}")
    return defaults[key]
