"""Kernel backend selection.

Two interchangeable implementations of the hot convolution kernels exist:
a pure-numpy one and a numba one. `GLYCONET_BACKEND` picks between them:

* ``auto`` (default): numba when importable, else numpy
* ``numba``: require numba, raise if it cannot be imported
* ``numpy``: never touch numba

Both produce bit-identical results; the numba path additionally accepts a
worker-thread count. Its parallel loops assign each output row to exactly one
thread, so results do not depend on the thread count either.
"""

from __future__ import annotations

import importlib
import logging
import os
from types import ModuleType

from ..errors import UsageError

logger = logging.getLogger(__name__)

BACKEND_ENV_VAR = "GLYCONET_BACKEND"
_CHOICES = ("auto", "numba", "numpy")
_loaded: dict[str, ModuleType] = {}


def _numba_importable() -> bool:
    try:
        importlib.import_module("numba")
        return True
    except ImportError:
        return False


def resolve_backend_name(name: str | None = None) -> str:
    """Turn an explicit request or the environment into 'numpy' or 'numba'."""
    requested = (name or os.environ.get(BACKEND_ENV_VAR, "auto")).strip().lower()
    if requested not in _CHOICES:
        raise UsageError(f"unknown backend {requested!r}; choose one of {', '.join(_CHOICES)}")
    if requested == "auto":
        return "numba" if _numba_importable() else "numpy"
    if requested == "numba" and not _numba_importable():
        raise UsageError("backend 'numba' requested but numba is not importable")
    return requested


def get_kernels(name: str | None = None) -> ModuleType:
    """Import (once) and return the kernel module for the chosen backend."""
    resolved = resolve_backend_name(name)
    if resolved not in _loaded:
        module = importlib.import_module(f".kernels_{resolved}", package=__package__)
        logger.info("using %s kernels", resolved)
        _loaded[resolved] = module
    return _loaded[resolved]


def set_threads(n_threads: int, backend_name: str | None = None) -> int:
    """Set the numba worker count; a no-op on the numpy backend.

    Returns the count actually in effect. Requests above the pool size that
    numba allocated at startup are clamped with a warning.
    """
    if n_threads < 1:
        raise UsageError("thread count must be at least 1")
    if resolve_backend_name(backend_name) != "numba":
        return 1
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    effective = min(n_threads, limit)
    if effective != n_threads:
        logger.warning("requested %d threads but the pool holds %d; using %d",
                       n_threads, limit, effective)
    numba.set_num_threads(effective)
    return effective
