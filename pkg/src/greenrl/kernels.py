"""Selects the simulator day kernel at import time.

The compiled extension is used when it was built; otherwise, or when
``GREENRL_PURE_PYTHON=1`` is set, the pure-Python twin is used. Both expose
``advance_day`` with the same signature and results.
"""
import os

from . import _simkernel_py

if os.environ.get("GREENRL_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _simkernel as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    advance_day = _compiled.advance_day
    BACKEND = "compiled"
else:
    advance_day = _simkernel_py.advance_day
    BACKEND = "python"

python_advance_day = _simkernel_py.advance_day
compiled_advance_day = _compiled.advance_day if _compiled is not None else None
