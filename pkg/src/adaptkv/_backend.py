"""Pick the kernel implementation at import time.

The compiled extension is used when it is importable. Setting
``ADAPTKV_PURE_PYTHON=1`` forces the NumPy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("ADAPTKV_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"


def available_backends():
    """Mapping of backend name to kernel module for everything importable."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        found["compiled"] = _kernels
    except ImportError:
        pass
    return found
