"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the
numpy implementations take over. Set PRUNESCOPE_PURE_PYTHON=1 to force
the fallback. Both backends are order-independent and individually
deterministic; they may disagree in the last few ulps because their
summation schemes differ (sorted Kahan vs sorted pairwise).
"""

import os

if os.environ.get("PRUNESCOPE_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
pooled_class_stats = _impl.pooled_class_stats
rbf_block_sums = _impl.rbf_block_sums
