"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
implementation. ``MFLMM_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ('cython', 'python' or None for the default)."""
    if name is None:
        name = os.environ.get("MFLMM_BACKEND", "").strip().lower() or None
    if name in (None, "auto"):
        return _compiled if _compiled is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


DEFAULT = get_backend()
BACKEND = DEFAULT.BACKEND
