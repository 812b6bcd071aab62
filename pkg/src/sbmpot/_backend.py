"""Select the compiled samplers when available, numpy otherwise.

Set SBMPOT_BACKEND=python to force the fallback.
"""
import os

from . import _kernels_py

NAME = "python"
kernels = _kernels_py

if os.environ.get("SBMPOT_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as kernels  # noqa: F811
        NAME = "compiled"
    except ImportError:
        kernels = _kernels_py


def get(name=None):
    """Return the kernel module by name ("compiled" or "python"); None gives the default."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
