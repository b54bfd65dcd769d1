"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is selected when the
extension is unavailable or when ACCD_PURE_PYTHON is set. Both expose
``cross_map_curve`` with identical semantics.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _ccm_numpy

_ccm_compiled = None
if os.environ.get("ACCD_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ccm_kernel as _ccm_compiled  # type: ignore[no-redef]
    except ImportError:
        _ccm_compiled = None

ACTIVE_BACKEND = "cython" if _ccm_compiled is not None else "numpy"

cross_map_curve = (_ccm_compiled or _ccm_numpy).cross_map_curve


def available_backends() -> list[str]:
    return ["cython", "numpy"] if _ccm_compiled is not None else ["numpy"]


def get_backend(name: str | None = None) -> ModuleType:
    """Return a kernel module by name; None selects the active backend."""
    if name is None:
        return _ccm_compiled or _ccm_numpy
    if name == "numpy":
        return _ccm_numpy
    if name == "cython":
        if _ccm_compiled is None:
            raise ValueError("compiled kernel is not available in this environment")
        return _ccm_compiled
    raise ValueError(f"unknown kernel backend {name!r}")
