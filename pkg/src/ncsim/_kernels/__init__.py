"""Hot cache/TLB kernels: compiled when available, pure Python otherwise.

Set ``NCSIM_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os

from . import _pykernels

_compiled = None
if os.environ.get("NCSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        _compiled = importlib.import_module("ncsim._kernels._ckernels")
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_active = _compiled if _compiled is not None else _pykernels


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" / "python" / None for default)."""
    if name is None:
        return _active
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


CacheCore = _active.CacheCore
TlbCore = _active.TlbCore
