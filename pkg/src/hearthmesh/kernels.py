"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_kernels_py`` module is used.  Set ``HEARTHMESH_PURE_PYTHON=1``
to force the fallback.
"""
import os

if os.environ.get("HEARTHMESH_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _kernels_py as _impl
        BACKEND = "python"

bfs = _impl.bfs
all_pairs = _impl.all_pairs
flood = _impl.flood
queue_offer = _impl.queue_offer
queue_advance = _impl.queue_advance
queue_run = _impl.queue_run

__all__ = ["BACKEND", "bfs", "all_pairs", "flood", "queue_offer", "queue_advance", "queue_run"]
