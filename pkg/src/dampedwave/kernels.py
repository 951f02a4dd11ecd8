"""Stepping kernel backend, chosen at import.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
NumPy/SciPy ``_pykernels`` module. Setting ``DAMPEDWAVE_PURE_PYTHON=1`` forces
the fallback. :func:`get_backend` returns either module explicitly.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

if _ckernels is not None and os.environ.get("DAMPEDWAVE_PURE_PYTHON", "") in ("", "0"):
    _impl = _ckernels
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"

propagate = _impl.propagate
propagate_adjoint = _impl.propagate_adjoint
advance = _impl.advance

AVAILABLE = ("cython", "python") if _ckernels is not None else ("python",)


def get_backend(name: str | None = None):
    """Kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
