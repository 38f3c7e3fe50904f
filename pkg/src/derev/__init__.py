"""Multichannel speech dereverberation toolkit.

Joint RTF-constrained spatial filtering and multichannel linear prediction
(batch mode for static sources, Kalman-recursion online mode for moving
sources), plus baselines, an image-method room simulator and an objective
evaluation suite.
"""

__version__ = "0.1.0"


class DerevError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DerevError):
    """Invalid configuration, geometry or file inputs (CLI exit code 2)."""


class NumericalError(DerevError):
    """Numerical failure such as a singular system (CLI exit code 3)."""


from .stft import StftConfig, StftTensor, analyze, synthesize  # noqa: E402
from .batch import BatchConfig, run_rtf_mclp, run_wpe, run_cascade, run_sdb  # noqa: E402
from .online import OnlineConfig, run_online  # noqa: E402

__all__ = [
    "DerevError",
    "ConfigError",
    "NumericalError",
    "StftConfig",
    "StftTensor",
    "analyze",
    "synthesize",
    "BatchConfig",
    "run_rtf_mclp",
    "run_wpe",
    "run_cascade",
    "run_sdb",
    "OnlineConfig",
    "run_online",
]
