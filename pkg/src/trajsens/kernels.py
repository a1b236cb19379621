"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the NumPy
fallback is loaded. Set ``TRAJSENS_BACKEND=python`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("TRAJSENS_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"cython"``, ``"python"``) or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
