"""Array-agnostic binaural rendering toolkit: SCORE spatial features, DSP
baselines, a toy alpha-conditioned renderer and objective metrics."""
from .errors import ArraybinError, ConfigError, DataError, DimensionMismatch, NumericalError

__version__ = "0.1.0"
