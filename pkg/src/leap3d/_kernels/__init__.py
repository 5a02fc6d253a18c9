"""Voxel-store kernels: compiled core with a NumPy fallback.

The compiled store is picked at import when the extension built; set
LEAP_KERNEL=numpy (or =cython) to force a backend, e.g. for benchmarks.
"""

from __future__ import annotations

import os

from ._fusion_py import PyVoxelStore

try:
    from ._fusion_cy import CyVoxelStore
except ImportError:  # extension not built; pure-Python fallback
    CyVoxelStore = None

_forced = os.environ.get("LEAP_KERNEL", "").strip().lower()
if _forced == "numpy":
    VoxelStore = PyVoxelStore
elif _forced == "cython":
    if CyVoxelStore is None:
        raise ImportError("LEAP_KERNEL=cython but the compiled kernel is not built")
    VoxelStore = CyVoxelStore
else:
    VoxelStore = CyVoxelStore if CyVoxelStore is not None else PyVoxelStore

BACKEND = VoxelStore.backend

__all__ = ["VoxelStore", "PyVoxelStore", "CyVoxelStore", "BACKEND"]
