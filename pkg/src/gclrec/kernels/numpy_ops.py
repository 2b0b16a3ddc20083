"""Pure-numpy fallbacks for the compiled kernels.

Used when the extension module is not built (or forced via
``GCLREC_BACKEND=numpy``). Slower by roughly an order of magnitude on the
propagation loop but numerically equivalent to float tolerance.
"""

import numpy as np


def csr_spmm(indptr, indices, data, dense, out):
    nnz = data.shape[0]
    if nnz == 0:
        out[:] = 0.0
        return
    prod = data[:, None] * dense[indices]
    # rows whose start equals nnz form a trailing empty block; they must not
    # enter reduceat (out of range, and they would clip the previous segment)
    cut = int(np.searchsorted(indptr[:-1], nnz, side="left"))
    np.add.reduceat(prod, indptr[:cut], axis=0, out=out[:cut])
    out[cut:] = 0.0
    # interior empty rows yield single-element garbage segments; zero them
    empty = indptr[1:cut + 1] == indptr[:cut]
    out[:cut][empty] = 0.0


def scatter_add_rows(acc, rows, vals):
    np.add.at(acc, rows, vals)
