"""KB completion toolkit: relation-path extraction, recurrent composition
scoring, classifier baselines, and MAP evaluation."""

from .kernels import BACKEND, NUMBA_AVAILABLE

__version__ = "0.1.0"
__all__ = ["BACKEND", "NUMBA_AVAILABLE", "__version__"]
