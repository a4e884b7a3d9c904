"""Pick the compiled kernel module when it imports, else the Python twin.

Set ``BEAMDN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("BEAMDN_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = kernels.NAME
