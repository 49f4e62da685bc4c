"""Select the compiled Rainflow kernels, falling back to pure Python.

Set ``CYCLEMARKET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CYCLEMARKET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_ext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py

switching_points = _impl.switching_points
rainflow_edges = _impl.rainflow_edges
grid_search = _impl.grid_search

__all__ = ["BACKEND", "switching_points", "rainflow_edges", "grid_search"]
