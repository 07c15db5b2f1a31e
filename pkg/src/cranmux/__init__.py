"""Latency and server-hour savings for computational multiplexing in a C-RAN BBU pool."""
from ._backend import NAME as BACKEND
from .config import (SystemConfig, Tolerances, dump_config, load_config, parse_config,
                     per_rrh_allocation, per_rrh_servers, stability_check, table_one)
from .errors import (ConfigError, ConvergenceError, CranmuxError, InfeasibleError,
                     QuadratureError, UnstableError)

__version__ = "0.1.0"
