"""Pick the compiled kernels when available.

Set ``CRANMUX_BACKEND=python`` to force the pure-Python implementation.
"""
import os

from . import _pykernels

if os.environ.get("CRANMUX_BACKEND", "").lower() == "python":
    kernels = _pykernels
    NAME = "python"
else:
    try:
        from . import _ckernels as kernels
        NAME = "cython"
    except ImportError:
        kernels = _pykernels
        NAME = "python"


def get(name=None):
    """Kernel module by name ("cython" or "python"); default is the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
