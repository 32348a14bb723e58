"""Hot-kernel dispatch.

The compiled extension ``_kernels`` is used when it imports; otherwise (or
when the environment variable ``XRANDLAB_PURE`` is set to a non-empty value
other than ``0``) the pure-Python twins in ``_kernels_py`` are used. Both
expose the same functions with the same semantics.
"""
import os

from . import _kernels_py

_force_pure = os.environ.get("XRANDLAB_PURE", "") not in ("", "0")

if _force_pure:
    _impl = _kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels as _impl

        COMPILED = True
    except ImportError:
        _impl = _kernels_py
        COMPILED = False

BACKEND = "cython" if COMPILED else "python"

project_polyhedron = _impl.project_polyhedron
pg_dykstra = _impl.pg_dykstra
best_split = _impl.best_split
size_condition = _impl.size_condition
certified_size = _impl.certified_size

__all__ = [
    "BACKEND",
    "COMPILED",
    "project_polyhedron",
    "pg_dykstra",
    "best_split",
    "size_condition",
    "certified_size",
]
