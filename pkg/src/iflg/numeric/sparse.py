"""Compressed sparse row matrices used for (normalized) adjacency."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix with canonical (sorted, duplicate-free) rows.

    Arithmetic is delegated to ``scipy.sparse``; this class only pins down the
    storage invariants the rest of the package relies on.
    """

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        rows, cols = self.shape
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        data = np.asarray(self.data, dtype=np.float64)
        if rows < 0 or cols < 0:
            raise ValueError(f"invalid shape {self.shape}")
        if indptr.shape != (rows + 1,) or indptr[0] != 0:
            raise ValueError("row offsets must have length rows+1 and start at 0")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("row offsets must be monotone")
        if indptr[-1] != len(indices) or len(indices) != len(data):
            raise ValueError("offsets, indices and values disagree in length")
        if len(indices) and (indices.min() < 0 or indices.max() >= cols):
            raise ValueError("column index out of range")
        if not np.all(np.isfinite(data)):
            raise ValueError("sparse values must be finite")
        if len(indices) > 1:
            bad = np.diff(indices) <= 0
            # a decrease across a row boundary is expected
            starts = indptr[1:-1]
            starts = starts[(starts > 0) & (starts < len(indices))]
            bad[starts - 1] = False
            if np.any(bad):
                row = int(np.searchsorted(indptr, np.argmax(bad) + 1, side="right") - 1)
                raise ValueError(f"column indices in row {row} not strictly increasing")
        object.__setattr__(self, "shape", (int(rows), int(cols)))
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_scipy(cls, m) -> SparseMatrix:
        csr = sp.csr_matrix(m, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape, csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, a) -> SparseMatrix:
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> SparseMatrix:
        return cls.from_scipy(sp.identity(n, format="csr"))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> SparseMatrix:
        return cls.from_scipy(sp.csr_matrix((rows, cols)))

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    @property
    def nnz(self) -> int:
        return len(self.data)

    def dense(self) -> np.ndarray:
        return self.csr.toarray()

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"
