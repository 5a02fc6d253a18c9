# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled voxel store: C++ hash map plus sequential Bayesian row updates."""

import numpy as np

cimport numpy as cnp
from cython.operator cimport dereference as deref
from libcpp.unordered_map cimport unordered_map

from ..errors import ZeroMassError

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.uint32_t u32


cdef class CyVoxelStore:
    """Hash map from packed voxel key to (distribution, observation count).

    Same interface as the NumPy fallback; fusion applies each observation
    in input order (multiply, renormalize), the sequential update rule
    verbatim.
    """

    cdef unordered_map[i64, Py_ssize_t] _map
    cdef public Py_ssize_t num_classes
    cdef object _packed_arr, _probs_arr, _counts_arr
    cdef i64[::1] _packed
    cdef double[:, ::1] _probs
    cdef u32[::1] _counts
    cdef Py_ssize_t _n

    backend = "cython"

    def __init__(self, num_classes, capacity=1024):
        self.num_classes = num_classes
        self._packed_arr = np.empty(capacity, dtype=np.int64)
        self._probs_arr = np.empty((capacity, num_classes), dtype=np.float64)
        self._counts_arr = np.zeros(capacity, dtype=np.uint32)
        self._rebind()
        self._n = 0

    cdef void _rebind(self):
        self._packed = self._packed_arr
        self._probs = self._probs_arr
        self._counts = self._counts_arr

    cdef void _ensure(self, Py_ssize_t extra):
        cdef Py_ssize_t need = self._n + extra
        cdef Py_ssize_t cap = self._packed_arr.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in ("_packed_arr", "_probs_arr", "_counts_arr"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)
        self._rebind()

    @property
    def size(self):
        return self._n

    def packed_view(self):
        return self._packed_arr[: self._n]

    def probs_view(self):
        return self._probs_arr[: self._n]

    def counts_view(self):
        return self._counts_arr[: self._n]

    def rows(self, packed):
        packed = np.ascontiguousarray(packed, dtype=np.int64)
        cdef i64[::1] keys = packed
        cdef Py_ssize_t n = keys.shape[0]
        out_arr = np.empty(n, dtype=np.int64)
        cdef i64[::1] out = out_arr
        cdef Py_ssize_t i
        cdef unordered_map[i64, Py_ssize_t].iterator it
        for i in range(n):
            it = self._map.find(keys[i])
            if it == self._map.end():
                out[i] = -1
            else:
                out[i] = deref(it).second
        return out_arr

    def fuse(self, packed, obs):
        """Sequential per-observation update: a new key stores the observation,
        an existing key multiplies and renormalizes. obs rows must be positive."""
        packed = np.ascontiguousarray(packed, dtype=np.int64)
        obs = np.ascontiguousarray(obs, dtype=np.float64)
        cdef i64[::1] keys = packed
        cdef double[:, ::1] o = obs
        cdef Py_ssize_t n = keys.shape[0]
        cdef Py_ssize_t c = self.num_classes
        if o.shape[1] != c:
            raise ValueError("observation width mismatch")
        self._ensure(n)
        cdef Py_ssize_t i, j, row
        cdef double s
        cdef unordered_map[i64, Py_ssize_t].iterator it
        for i in range(n):
            it = self._map.find(keys[i])
            if it == self._map.end():
                row = self._n
                self._packed[row] = keys[i]
                for j in range(c):
                    self._probs[row, j] = o[i, j]
                self._counts[row] = 1
                self._map[keys[i]] = row
                self._n += 1
            else:
                row = deref(it).second
                s = 0.0
                for j in range(c):
                    self._probs[row, j] *= o[i, j]
                    s += self._probs[row, j]
                if s <= 0.0:
                    raise ZeroMassError("fused distribution lost all mass")
                for j in range(c):
                    self._probs[row, j] /= s
                self._counts[row] += 1

    def bulk_insert(self, packed, probs, counts):
        packed = np.ascontiguousarray(packed, dtype=np.int64)
        probs = np.ascontiguousarray(probs, dtype=np.float64)
        counts = np.ascontiguousarray(counts, dtype=np.uint32)
        cdef i64[::1] keys = packed
        cdef double[:, ::1] p = probs
        cdef u32[::1] cnt = counts
        cdef Py_ssize_t n = keys.shape[0]
        cdef Py_ssize_t c = self.num_classes
        self._ensure(n)
        cdef Py_ssize_t i, j, row
        for i in range(n):
            if self._map.count(keys[i]):
                raise ValueError(f"duplicate voxel key {keys[i]}")
            row = self._n
            self._packed[row] = keys[i]
            for j in range(c):
                self._probs[row, j] = p[i, j]
            self._counts[row] = cnt[i]
            self._map[keys[i]] = row
            self._n += 1

    def merge(self, packed, probs, counts):
        packed = np.ascontiguousarray(packed, dtype=np.int64)
        probs = np.ascontiguousarray(probs, dtype=np.float64)
        counts = np.ascontiguousarray(counts, dtype=np.uint32)
        cdef i64[::1] keys = packed
        cdef double[:, ::1] p = probs
        cdef u32[::1] cnt = counts
        cdef Py_ssize_t n = keys.shape[0]
        cdef Py_ssize_t c = self.num_classes
        self._ensure(n)
        cdef Py_ssize_t i, j, row
        cdef double s
        cdef unordered_map[i64, Py_ssize_t].iterator it
        for i in range(n):
            it = self._map.find(keys[i])
            if it == self._map.end():
                row = self._n
                self._packed[row] = keys[i]
                for j in range(c):
                    self._probs[row, j] = p[i, j]
                self._counts[row] = cnt[i]
                self._map[keys[i]] = row
                self._n += 1
            else:
                row = deref(it).second
                s = 0.0
                for j in range(c):
                    self._probs[row, j] *= p[i, j]
                    s += self._probs[row, j]
                if s <= 0.0:
                    raise ZeroMassError("merged distribution lost all mass")
                for j in range(c):
                    self._probs[row, j] /= s
                self._counts[row] += cnt[i]
