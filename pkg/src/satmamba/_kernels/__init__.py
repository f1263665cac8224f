"""Kernel backends for the selective scan.

The sequential reference recurrence (``seq_fwd``/``seq_bwd``) is always
the plain numpy loop from ``scan_ref`` -- it is the oracle other paths
are verified against. The chunked hot path (``chunk_fwd``/``chunk_bwd``)
uses the compiled Cython kernel when the extension built; setting
SATMAMBA_PURE_PYTHON=1 (or a failed build) selects the batched-numpy
implementation in ``chunk_ref`` instead. Both chunked backends stay
importable so benchmarks can compare them.
"""

import os

from . import chunk_ref, scan_ref

if os.environ.get("SATMAMBA_PURE_PYTHON", "") == "1":
    _impl = chunk_ref
else:
    try:
        from . import _scan_cy as _impl
    except ImportError:
        _impl = chunk_ref

BACKEND = _impl.BACKEND
seq_fwd = scan_ref.seq_fwd
seq_bwd = scan_ref.seq_bwd
chunk_fwd = _impl.chunk_fwd
chunk_bwd = _impl.chunk_bwd

__all__ = ["BACKEND", "seq_fwd", "seq_bwd", "chunk_fwd", "chunk_bwd",
           "scan_ref", "chunk_ref"]
