"""Pure-NumPy voxel store.

Fallback used when the compiled extension is unavailable. Batched fusion
groups observations per voxel with a stable sort and accumulates the
product of likelihoods in log space, which is order-invariant and equal
to the sequential per-observation update up to rounding.
"""

from __future__ import annotations

import numpy as np

from ..errors import ZeroMassError


class PyVoxelStore:
    """Hash map from packed voxel key to (distribution, observation count)."""

    backend = "numpy"

    def __init__(self, num_classes: int, capacity: int = 1024):
        self.num_classes = int(num_classes)
        self._index: dict[int, int] = {}
        self._packed = np.empty(capacity, dtype=np.int64)
        self._probs = np.empty((capacity, self.num_classes), dtype=np.float64)
        self._counts = np.zeros(capacity, dtype=np.uint32)
        self._n = 0

    # --- capacity -----------------------------------------------------------

    def _ensure(self, extra: int) -> None:
        need = self._n + extra
        if need <= self._packed.shape[0]:
            return
        cap = max(need, 2 * self._packed.shape[0])
        for name in ("_packed", "_probs", "_counts"):
            old = getattr(self, name)
            shape = (cap,) + old.shape[1:]
            new = np.zeros(shape, dtype=old.dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)

    # --- views --------------------------------------------------------------

    @property
    def size(self) -> int:
        return self._n

    def packed_view(self) -> np.ndarray:
        return self._packed[: self._n]

    def probs_view(self) -> np.ndarray:
        return self._probs[: self._n]

    def counts_view(self) -> np.ndarray:
        return self._counts[: self._n]

    # --- lookups ------------------------------------------------------------

    def rows(self, packed: np.ndarray) -> np.ndarray:
        get = self._index.get
        return np.fromiter((get(int(k), -1) for k in packed), dtype=np.int64, count=len(packed))

    # --- mutation -----------------------------------------------------------

    def fuse(self, packed: np.ndarray, obs: np.ndarray) -> None:
        """Multiply each voxel's distribution by its observations and renormalize.

        obs rows must be strictly positive (clamped upstream).
        """
        n = packed.shape[0]
        if n == 0:
            return
        order = np.argsort(packed, kind="stable")
        sp = packed[order]
        starts = np.flatnonzero(np.concatenate([[True], sp[1:] != sp[:-1]]))
        uniq = sp[starts]
        group_sizes = np.diff(np.concatenate([starts, [n]]))

        # per-voxel likelihood product; single-observation groups skip the
        # log/exp round trip so they match the sequential kernel bit for bit
        prod = np.empty((uniq.size, self.num_classes), dtype=np.float64)
        single = group_sizes == 1
        prod[single] = obs[order[starts[single]]]
        if np.any(~single):
            log_prod = np.add.reduceat(np.log(obs[order]), starts, axis=0)[~single]
            prod[~single] = np.exp(log_prod - log_prod.max(axis=1, keepdims=True))

        rows = self.rows(uniq)
        fresh = rows < 0

        hit_rows = rows[~fresh]
        if hit_rows.size:
            upd = self._probs[hit_rows] * prod[~fresh]
            sums = upd.sum(axis=1, keepdims=True)
            if np.any(sums <= 0.0):
                raise ZeroMassError("fused distribution lost all mass")
            self._probs[hit_rows] = upd / sums
            self._counts[hit_rows] += group_sizes[~fresh].astype(np.uint32)

        n_new = int(fresh.sum())
        if n_new:
            self._ensure(n_new)
            dist = prod[fresh]
            multi = ~single[fresh]
            if np.any(multi):
                dist[multi] /= dist[multi].sum(axis=1, keepdims=True)
            lo, hi = self._n, self._n + n_new
            self._packed[lo:hi] = uniq[fresh]
            self._probs[lo:hi] = dist
            self._counts[lo:hi] = group_sizes[fresh]
            for off, k in enumerate(uniq[fresh]):
                self._index[int(k)] = lo + off
            self._n = hi

    def bulk_insert(self, packed: np.ndarray, probs: np.ndarray, counts: np.ndarray) -> None:
        """Append fresh rows verbatim; duplicate keys are an error."""
        n = packed.shape[0]
        if n == 0:
            return
        self._ensure(n)
        lo = self._n
        for off, k in enumerate(packed):
            k = int(k)
            if k in self._index:
                raise ValueError(f"duplicate voxel key {k}")
            self._index[k] = lo + off
        self._packed[lo:lo + n] = packed
        self._probs[lo:lo + n] = probs
        self._counts[lo:lo + n] = counts
        self._n = lo + n

    def merge(self, packed: np.ndarray, probs: np.ndarray, counts: np.ndarray) -> None:
        """Fold another store's rows in: product-and-renormalize on overlap,
        verbatim insert elsewhere; observation counts add."""
        if packed.shape[0] == 0:
            return
        rows = self.rows(packed)
        hit = rows >= 0
        hit_rows = rows[hit]
        if hit_rows.size:
            upd = self._probs[hit_rows] * probs[hit]
            sums = upd.sum(axis=1, keepdims=True)
            if np.any(sums <= 0.0):
                raise ZeroMassError("merged distribution lost all mass")
            self._probs[hit_rows] = upd / sums
            self._counts[hit_rows] += counts[hit].astype(np.uint32)
        if np.any(~hit):
            self.bulk_insert(packed[~hit], probs[~hit], counts[~hit])
