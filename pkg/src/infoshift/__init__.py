"""Usable-information measurement for labeled text corpora.

The package estimates how much information a predictive family can extract
from listing text about a machine decision, compares periods with OLS, runs
token ablations, and exactly solves finite instances of the constrained
environment-design problem.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, InfoshiftError, NumericError

__all__ = ["ConfigError", "DataError", "InfoshiftError", "NumericError", "__version__"]
