"""Integration-kernel backend selection.

The compiled extension is preferred when present; the pure-numpy twin is
used otherwise.  Set ``NEURITEFLOW_PURE_PY=1`` to force the fallback (the
two produce bit-identical states; see ``benchmarks/bench_kernels.py`` for
the speed comparison).
"""

import os

import numpy as np

_force_py = os.environ.get("NEURITEFLOW_PURE_PY", "") not in ("", "0")

if not _force_py:
    try:
        from . import _kernels as _impl
    except ImportError:
        from . import _kernels_py as _impl
else:
    from . import _kernels_py as _impl

advance = _impl.advance
BACKEND = _impl.BACKEND_NAME


class KernelOps:
    """CSR operator bundle in the layout both kernel backends consume.

    The python lane's matrices are rebuilt over the exact arrays the
    compiled lane indexes, so the two never diverge.
    """

    def __init__(self, lap_csr, up_csr):
        from scipy.sparse import csr_matrix

        self.lap_indptr = np.ascontiguousarray(lap_csr.indptr, dtype=np.int32)
        self.lap_indices = np.ascontiguousarray(lap_csr.indices, dtype=np.int32)
        self.lap_data = np.ascontiguousarray(lap_csr.data, dtype=np.float64)
        self.up_indptr = np.ascontiguousarray(up_csr.indptr, dtype=np.int32)
        self.up_indices = np.ascontiguousarray(up_csr.indices, dtype=np.int32)
        self.up_data = np.ascontiguousarray(up_csr.data, dtype=np.float64)
        self.lap = csr_matrix(
            (self.lap_data, self.lap_indices, self.lap_indptr), shape=lap_csr.shape
        )
        self.up = csr_matrix(
            (self.up_data, self.up_indices, self.up_indptr), shape=up_csr.shape
        )
