"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
NumPy fallback in ``_pycore``.  Setting ``NNGP_CHOL_BACKEND=python`` in the
environment forces the fallback at import time, and :func:`use_backend`
switches at runtime (tests and the benchmark use it to compare both).
"""
import contextlib
import os

from . import _pycore

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_BACKENDS = {"python": _pycore}
if _core is not None:
    _BACKENDS["cython"] = _core

if os.environ.get("NNGP_CHOL_BACKEND", "").lower() == "python" or _core is None:
    _active = "python"
else:
    _active = "cython"


def available():
    return sorted(_BACKENDS)


def name():
    return _active


def kernels():
    return _BACKENDS[_active]


def set_backend(backend):
    global _active
    if backend not in _BACKENDS:
        raise ValueError(f"backend {backend!r} not available; have {available()}")
    _active = backend


@contextlib.contextmanager
def use_backend(backend):
    previous = _active
    set_backend(backend)
    try:
        yield
    finally:
        set_backend(previous)
