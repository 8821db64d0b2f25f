"""Selects the compiled core or the numpy fallback at import time.

Set ``GMMFIELD_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

if os.environ.get("GMMFIELD_BACKEND", "").lower() == "python":
    _impl = _fallback
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "python"

mixture_eval = _impl.mixture_eval
mixture_jacobian = _impl.mixture_jacobian
blend_eval = _impl.blend_eval
squared_edt = _impl.squared_edt


def compiled_available() -> bool:
    try:
        from . import _core  # noqa: F401
    except ImportError:
        return False
    return True


def get_impl(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
