"""Selects the compiled likelihood kernel, falling back to numpy.

Set ``DDPVF_PURE_PYTHON=1`` to force the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("DDPVF_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import loglik_sum, loglik_terms
else:
    try:
        from ._kernels import loglik_sum, loglik_terms
        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import loglik_sum, loglik_terms

__all__ = ["BACKEND", "loglik_sum", "loglik_terms"]
