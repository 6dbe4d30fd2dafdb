"""Backend dispatch for the fused GRU sequence kernels.

The active backend is decided once at import time by `taskmix.backend`
(env var TASKMIX_BACKEND, values "numba" or "numpy"). Both backends
expose the same three functions and agree to float64 roundoff.
"""

from taskmix.backend import ACTIVE_BACKEND

if ACTIVE_BACKEND == "numba":
    from taskmix.nn.kernels.gru_numba import (gru_backward, gru_cell,
                                              gru_forward, gru_forward_last)
else:
    from taskmix.nn.kernels.gru_numpy import (gru_backward, gru_cell,
                                              gru_forward, gru_forward_last)

__all__ = ["gru_forward", "gru_forward_last", "gru_cell", "gru_backward",
           "ACTIVE_BACKEND"]
