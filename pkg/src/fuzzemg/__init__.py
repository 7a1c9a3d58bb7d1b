"""fuzzemg: noise-tolerant multichannel biosignal classification.

Per-channel one-class detectors estimate how contaminated each signal
channel is; their soft purity degrees correct a Gaussian-kernel fuzzy KNN
ensemble. The package also ships the full evaluation harness used to
compare the ensemble against attribute-weighting baselines under
SNR-controlled contamination.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateSignalError,
    FuzzemgError,
    NumericalError,
)

__all__ = [
    "__version__",
    "ConfigurationError",
    "DataError",
    "DegenerateSignalError",
    "FuzzemgError",
    "NumericalError",
]
