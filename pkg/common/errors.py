"""
Exception hierarchy shared by every pipeline stage.
"""

import numpy as np


class GpMergeError(Exception):
    """Base class for all errors raised by this package"""


class ConfigurationError(GpMergeError, ValueError):
    """Invalid configuration: unknown model, C > n, bad counts, dof <= 2"""


class DomainError(GpMergeError, ValueError):
    """Log-density is not finite at the requested parameter, or data are invalid"""


class DivergenceError(GpMergeError, RuntimeError):
    """Every adaptation iteration of an HMC run diverged"""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PostprocessError(GpMergeError, RuntimeError):
    """Thinning/deduplication left no draws"""


class FitError(GpMergeError, RuntimeError):
    """Every hyperparameter optimisation restart failed"""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DecompositionError(GpMergeError, np.linalg.LinAlgError):
    """Covariance factorisation failed after the maximum jitter"""


class DegenerateWeightsError(GpMergeError, RuntimeError):
    """All importance weights vanished; proposal misses the posterior support"""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MetricError(GpMergeError, ValueError):
    """Discrepancy metric preconditions violated"""


class IngestError(GpMergeError, ValueError):
    """CSV file is missing columns or holds missing/non-numeric cells"""
