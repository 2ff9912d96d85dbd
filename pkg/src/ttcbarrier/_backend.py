"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback takes over transparently. ``TTCBARRIER_PURE_PYTHON=1`` forces the
fallback, which the benchmark suite uses to compare the two.
"""
from __future__ import annotations

import os

if os.environ.get("TTCBARRIER_PURE_PYTHON") == "1":
    from . import _kernels_py as kernels

    COMPILED = False
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

        COMPILED = False


def backend_name() -> str:
    return "compiled" if COMPILED else "python"


def get_kernels(name: str | None = None):
    """Kernel module by name ("compiled" or "python"); default is the one
    selected at import time."""
    if name is None:
        return kernels
    if name == "python":
        from . import _kernels_py

        return _kernels_py
    if name == "compiled":
        from . import _kernels  # raises ImportError when the extension is absent

        return _kernels
    raise ValueError(f"unknown kernel backend: {name!r}")
