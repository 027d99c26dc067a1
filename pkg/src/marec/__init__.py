"""Multi-anatomy undersampled MRI reconstruction with shared/specific
parameterized learners."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DataError, MarecError, NumericError

__all__ = [
    "__version__",
    "MarecError",
    "ConfigurationError",
    "DataError",
    "NumericError",
]
