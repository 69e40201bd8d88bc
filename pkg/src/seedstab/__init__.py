"""Measure how much a small sentiment classifier's behavioral failures move across seeds."""
from ._kernels import BACKEND
from .config import RunConfig, from_dict, load_config
from .errors import SeedstabError

__version__ = "0.1.0"

__all__ = ["BACKEND", "RunConfig", "SeedstabError", "from_dict", "load_config", "__version__"]
