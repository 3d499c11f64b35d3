"""
Layered runtime options.

Defaults live in ``option_defaults`` (section -> key -> value). An INI file
named by ``--config`` or ``TENREC_CONFIG`` may override any key, and a few
environment variables override the file. Every value is coerced to the type
of its default so a typo in the INI file fails loudly at load time.
"""
import configparser
import copy
import os

from tenrec import constants
from tenrec.errors import ArgumentError
from tenrec.logger import logging

option_defaults = {
    "Solver": {
        "mu0": constants.MU0,
        "mu_max": constants.MU_MAX,
        "rho": constants.RHO,
        "eps": constants.EPS,
        "maxiter": constants.MAXITER,
        "rank_factor": constants.RANK_FACTOR,
        "log_every": constants.LOG_EVERY,
    },
    "Bench": {
        "trials": constants.DEFAULT_TRIALS,
        "rse_threshold": constants.RSE_THRESHOLD,
        "psnr_peak": constants.PSNR_PEAK,
    },
    "Runtime": {
        "threads": 1,
    },
}

env_overrides = {
    constants.ENV_THREADS: ("Runtime", "threads"),
}


def _coerce(section, key, raw):
    default = option_defaults[section][key]
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return type(default)(raw)
    except (TypeError, ValueError):
        raise ArgumentError(
            f"Option [{section}] {key} expects {type(default).__name__}, got {raw!r}"
        )


def _read_config(path):
    config = configparser.ConfigParser(interpolation=None)
    config.optionxform = str  # Preserve case
    if not config.read(path, encoding="utf-8"):
        raise ArgumentError(f"Config file not found: {path}")
    return config


def load_options(path=None, environ=None):
    environ = os.environ if environ is None else environ
    options = copy.deepcopy(option_defaults)

    path = path or environ.get(constants.ENV_CONFIG)
    if path:
        config = _read_config(path)
        for section in config.sections():
            if section not in options:
                logging.warning(f"Ignoring unknown config section [{section}]")
                continue
            for key, raw in config[section].items():
                if key not in options[section]:
                    logging.warning(f"Ignoring unknown option [{section}] {key}")
                    continue
                options[section][key] = _coerce(section, key, raw)

    for env_name, (section, key) in env_overrides.items():
        if env_name in environ:
            options[section][key] = _coerce(section, key, environ[env_name])

    if options["Runtime"]["threads"] < 1:
        raise ArgumentError("Runtime threads must be at least 1")
    return options


def worker_count(environ=None):
    """Worker cap for per-mode and per-trial parallelism."""
    return load_options(environ=environ)["Runtime"]["threads"]
