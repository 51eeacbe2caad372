"""Hot loops (arc shooting, node Jacobians, HJB sweeps).

The compiled extension ``_core`` is used when it was built; otherwise, or when
``REGIONAL_OC_BACKEND=python`` is set, the numpy implementation in
``_fallback`` is selected at import time.
"""

from __future__ import annotations

import os

from . import _fallback
from .program import ArcProgram

_forced = os.environ.get("REGIONAL_OC_BACKEND", "").strip().lower()

try:
    if _forced == "python":
        raise ImportError("python backend requested")
    from . import _core as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


def get_backend(name: str | None = None):
    """Kernel module by name (``"cython"``/``"python"``); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


shoot_arc = _impl.shoot_arc
node_jacobians = _impl.node_jacobians
backward_arc = _impl.backward_arc
hjb_gauss_seidel = _impl.hjb_gauss_seidel
hjb_jacobi = _impl.hjb_jacobi

__all__ = [
    "ArcProgram",
    "BACKEND",
    "backward_arc",
    "get_backend",
    "hjb_gauss_seidel",
    "hjb_jacobi",
    "node_jacobians",
    "shoot_arc",
]
