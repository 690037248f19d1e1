"""Backend selection for the stacked-recurrence kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. ``SEQSPARSE_BACKEND=python`` forces the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("SEQSPARSE_BACKEND", "").lower() in ("python", "numpy"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.NAME
forward_recurrence = _impl.forward_recurrence
backward_recurrence = _impl.backward_recurrence


def get_backend(name=None):
    """Kernel module by name (``"compiled"`` or ``"python"``); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
