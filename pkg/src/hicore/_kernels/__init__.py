"""Kernel backend selection.

Prefers the compiled extension, falls back to the pure-Python reference.
Set HICORE_KERNELS=py or HICORE_KERNELS=c to force a backend.
"""
import os

_forced = os.environ.get("HICORE_KERNELS", "").strip().lower()

if _forced in ("py", "python"):
    from . import _pycore as impl
elif _forced in ("c", "compiled", "cython"):
    from . import _core as impl  # type: ignore[no-redef]
else:
    try:
        from . import _core as impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pycore as impl


def backend_name() -> str:
    return impl.BACKEND
