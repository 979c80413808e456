"""Selects the compiled kernel when importable, else the pure-Python twin.

Set ``CRITWALK_BACKEND=python`` to force the fallback, or ``compiled`` to
make a missing extension an import error.
"""

from __future__ import annotations

import os

from . import _kernel_py

_choice = os.environ.get("CRITWALK_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"CRITWALK_BACKEND must be auto, python or compiled, got {_choice!r}")

kernel = _kernel_py
if _choice != "python":
    try:
        from . import _ckernel as kernel  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise
        kernel = _kernel_py

NAME = "compiled" if kernel is not _kernel_py else "python"
KernelError = _kernel_py.KernelError
TrapOverflow = _kernel_py.TrapOverflow


def get(name: str | None = None):
    """Kernel module by name (``None`` gives the default selection)."""
    if name is None:
        return kernel
    if name == "python":
        return _kernel_py
    if name == "compiled":
        from . import _ckernel
        return _ckernel
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    out = ["python"]
    try:
        from . import _ckernel  # noqa: F401
        out.insert(0, "compiled")
    except ImportError:
        pass
    return out
