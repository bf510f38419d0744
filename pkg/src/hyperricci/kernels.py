"""Kernel selection: compiled ``_core`` when importable, else ``_pycore``.

Set ``HYPERRICCI_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pycore

BACKEND = "python"

if os.environ.get("HYPERRICCI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pycore
else:
    _impl = _pycore

transport_cost = _impl.transport_cost
edge_direction = _impl.edge_direction

__all__ = ["BACKEND", "transport_cost", "edge_direction"]
