"""Kernel backend selection.

The compiled extension is used when importable; setting ``MPCT_PURE_PYTHON=1``
or calling :func:`use` switches to the NumPy twin.
"""
from __future__ import annotations

import contextlib
import os

from mpct.solver import _purepy

try:
    if os.environ.get("MPCT_PURE_PYTHON") == "1":
        raise ImportError("pure-Python kernels requested")
    from mpct.solver import _kernels as native
except ImportError:  # extension not built
    native = None

_BACKENDS = {"python": _purepy}
if native is not None:
    _BACKENDS["native"] = native

_active = "native" if native is not None else "python"


def available():
    return sorted(_BACKENDS)


def name():
    return _active


def kernels():
    return _BACKENDS[_active]


def set_backend(which):
    global _active
    if which not in _BACKENDS:
        raise ValueError(f"backend {which!r} unavailable (have {available()})")
    _active = which


@contextlib.contextmanager
def use(which):
    prev = _active
    set_backend(which)
    try:
        yield kernels()
    finally:
        set_backend(prev)
