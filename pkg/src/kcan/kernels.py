"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; setting ``KCAN_PURE_PYTHON=1``
forces the fallback.  Both backends share one signature per function.
"""

import os

from . import _pykernels

if os.environ.get("KCAN_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

segment_softmax = _impl.segment_softmax
segment_softmax_backward = _impl.segment_softmax_backward
spmm = _impl.spmm
spmm_backward = _impl.spmm_backward
scatter_add_rows = _impl.scatter_add_rows
sample_rows = _impl.sample_rows
bfs_sample = _impl.bfs_sample

__all__ = [
    "BACKEND",
    "segment_softmax",
    "segment_softmax_backward",
    "spmm",
    "spmm_backward",
    "scatter_add_rows",
    "sample_rows",
    "bfs_sample",
]
