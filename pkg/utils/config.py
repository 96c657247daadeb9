"""
Run configuration and logging setup
"""
import json
import logging
import os

from .exceptions import ConfigError
from .optimizer import TrainConfig

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level=None):
    """
    Configure root logging once for the process

    Args:
        level (str, optional): Level name; POSITIVIZE_LOG_LEVEL or INFO if omitted
    """
    name = (level or os.environ.get("POSITIVIZE_LOG_LEVEL", "INFO")).upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level {name!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)


def default_n_jobs():
    """Worker count from POSITIVIZE_N_JOBS, 1 if unset"""
    value = os.environ.get("POSITIVIZE_N_JOBS", "1")
    try:
        n_jobs = int(value)
    except ValueError:
        raise ConfigError(f"POSITIVIZE_N_JOBS must be an integer, got {value!r}")
    if n_jobs == 0:
        raise ConfigError("POSITIVIZE_N_JOBS must be non-zero")
    return n_jobs


def load_config(path=None, overrides=None):
    """
    Resolve a TrainConfig from defaults, an optional JSON file and overrides

    Nested sections ("cost", "circuit") are merged key by key, so a file may
    set only the values it changes.

    Args:
        path (str, optional): JSON configuration file
        overrides (dict, optional): Values applied after the file

    Returns:
        TrainConfig: Validated configuration
    """
    data = TrainConfig().to_dict()
    sources = []
    if path:
        try:
            with open(path) as f:
                sources.append(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read configuration {path}: {e}")
    if overrides:
        sources.append(overrides)

    for source in sources:
        if not isinstance(source, dict):
            raise ConfigError("Configuration must be a JSON object")
        for key, value in source.items():
            if key in ("cost", "circuit") and isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value

    return TrainConfig.from_dict(data)


def dump_config(config):
    """Fully resolved configuration as indented JSON text"""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)
