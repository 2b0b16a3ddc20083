# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""CSR sparse-matrix x dense-matrix product and row scatter-add.

These two loops dominate a training batch (graph propagation forward and
backward, plus gradient accumulation). Summation order is fixed: ascending
nonzero index within each row, ascending position within the update list,
so results are bit-reproducible.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_spmm(cnp.int64_t[::1] indptr,
             cnp.int64_t[::1] indices,
             cnp.float64_t[::1] data,
             cnp.float64_t[:, ::1] dense,
             cnp.float64_t[:, ::1] out):
    """out[r] = sum_k data[k] * dense[indices[k]] over row r's nonzeros."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    cdef Py_ssize_t r, k, c, j
    cdef double v
    with nogil:
        for r in range(n_rows):
            for j in range(d):
                out[r, j] = 0.0
            for k in range(indptr[r], indptr[r + 1]):
                c = indices[k]
                v = data[k]
                for j in range(d):
                    out[r, j] += v * dense[c, j]
    return None


def scatter_add_rows(cnp.float64_t[:, ::1] acc,
                     cnp.int64_t[::1] rows,
                     cnp.float64_t[:, ::1] vals):
    """acc[rows[k]] += vals[k], sequential in k (duplicates accumulate)."""
    cdef Py_ssize_t m = rows.shape[0]
    cdef Py_ssize_t d = acc.shape[1]
    cdef Py_ssize_t k, j, r
    with nogil:
        for k in range(m):
            r = rows[k]
            for j in range(d):
                acc[r, j] += vals[k, j]
    return None
