"""Fast reassembly of sparse matrices that depend linearly on a vector.

A matrix of the form ``sum_k L_k diag(S_k y) R_k`` has a sparsity pattern that
does not depend on ``y`` and CSC data that is linear in ``y``. The map from
``y`` to that data is itself a sparse matrix, built once per grid, so each
reassembly is a single sparse mat-vec instead of a chain of sparse products.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _outer_triplets(left: sp.spmatrix, right: sp.spmatrix):
    """All (row, col, mid, value) with value = left[row, mid] * right[mid, col]."""
    lc = left.tocsc()
    rr = right.tocsr()
    lc.sort_indices()
    rr.sort_indices()
    cl = np.diff(lc.indptr)
    cr = np.diff(rr.indptr)
    per = cl * cr
    total = int(per.sum())
    mid = np.repeat(np.arange(per.size), per)
    local = np.arange(total) - np.repeat(np.cumsum(per) - per, per)
    a = local // np.maximum(cr[mid], 1)
    b = local - a * cr[mid]
    li = lc.indptr[mid] + a
    ri = rr.indptr[mid] + b
    return lc.indices[li], rr.indices[ri], mid, lc.data[li] * rr.data[ri]


class PatternMap:
    """CSC assembly of ``const + sum_k L_k diag(S_k y) R_k`` on a fixed pattern.

    ``extra_patterns`` are matrices whose sparsity must be covered so that
    constants built from them can be added with :meth:`project`.
    """

    def __init__(self, terms, shape: tuple[int, int], nvec: int, extra_patterns=()):
        self.shape = shape
        nrow = shape[0]
        parts = [_outer_triplets(left, right) for left, _, right in terms]
        keys = [c.astype(np.int64) * nrow + r for r, c, _, _ in parts]
        for m in extra_patterns:
            coo = sp.coo_matrix(m)
            keys.append(coo.col.astype(np.int64) * nrow + coo.row)
        uniq = np.unique(np.concatenate(keys))
        self._keys = uniq
        self.indices = (uniq % nrow).astype(np.int32)
        cols = uniq // nrow
        self.indptr = np.searchsorted(cols, np.arange(shape[1] + 1)).astype(np.int32)
        nnz = uniq.size
        e = sp.csr_matrix((nnz, nvec))
        for (r, c, mid, val), (_, s, _) in zip(parts, terms):
            pos = np.searchsorted(uniq, c.astype(np.int64) * nrow + r)
            m = sp.csr_matrix((val, (pos, mid)), shape=(nnz, s.shape[0]))
            e = e + m @ s
        self.e = e.tocsr()

    @property
    def nnz(self) -> int:
        return self._keys.size

    def project(self, m: sp.spmatrix) -> np.ndarray:
        """Data vector of a constant matrix whose pattern lies inside ours."""
        coo = sp.coo_matrix(m)
        k = coo.col.astype(np.int64) * self.shape[0] + coo.row
        pos = np.searchsorted(self._keys, k)
        if np.any(pos >= self.nnz) or np.any(self._keys[np.minimum(pos, self.nnz - 1)] != k):
            raise ValueError("matrix pattern is not covered")
        return np.bincount(pos, weights=coo.data, minlength=self.nnz)

    def data(self, y: np.ndarray, const: np.ndarray | None = None) -> np.ndarray:
        d = self.e @ y
        return d if const is None else d + const

    def matrix(self, y: np.ndarray, const: np.ndarray | None = None) -> sp.csc_matrix:
        return sp.csc_matrix((self.data(y, const), self.indices, self.indptr), shape=self.shape)
