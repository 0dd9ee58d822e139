"""Kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``DDAN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from ddan import _fallback

if os.environ.get("DDAN_PURE_PYTHON") == "1":
    _impl = _fallback
else:
    try:
        from ddan import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "python" if _impl is _fallback else "cython"

wasserstein_1d_sorted = _impl.wasserstein_1d_sorted
batch_hard_indices = _impl.batch_hard_indices
rank_metrics = _impl.rank_metrics

__all__ = ["BACKEND", "wasserstein_1d_sorted", "batch_hard_indices", "rank_metrics"]
