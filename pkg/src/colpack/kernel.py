"""Selects the Monte Carlo kernel backend at import time.

The compiled extension is used when it imports cleanly; otherwise the
pure-Python twin is used. Set ``COLPACK_PURE_PYTHON=1`` to force the fallback.
Both expose ``pair_overlap``, ``count_overlaps``, ``volume_move`` and
``run_sweeps`` with identical signatures and bit-identical results.
"""

import os

from . import _pykernel as python_backend

compiled_backend = None
if os.environ.get("COLPACK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernel as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend

BACKEND = _impl.BACKEND
RAND_PER_TRIAL = 6

pair_overlap = _impl.pair_overlap
count_overlaps = _impl.count_overlaps
volume_move = _impl.volume_move
run_sweeps = _impl.run_sweeps


def get_backend(name=None):
    """Return a backend module by name ("cython" or "python"); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernel is not available")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")
