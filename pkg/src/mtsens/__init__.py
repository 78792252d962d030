"""Monte Carlo sensitivity analysis for unmeasured confounding with multiple treatments."""

from .errors import DataError, NumericError

__version__ = "0.1.0"

__all__ = ["DataError", "NumericError", "__version__"]
