"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The backend is chosen at import: the Cython extension if it built, numpy
otherwise. ``GCLREC_BACKEND`` (``auto`` / ``cython`` / ``numpy``) or
:func:`set_backend` override the choice; ``cython`` raises if the extension
is unavailable. ``python -m gclrec.kernels.bench`` compares the two.
"""

import os

import numpy as np

from gclrec.kernels import numpy_ops

try:
    from gclrec.kernels import _spmm as _cython_ops
except ImportError:
    _cython_ops = None

_BACKENDS = {"numpy": numpy_ops}
if _cython_ops is not None:
    _BACKENDS["cython"] = _cython_ops


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def _resolve(name: str):
    if name == "auto":
        name = "cython" if _cython_ops is not None else "numpy"
    if name not in _BACKENDS:
        raise RuntimeError(
            f"kernel backend {name!r} unavailable (have {available_backends()})"
        )
    return name


_active = _resolve(os.environ.get("GCLREC_BACKEND", "auto"))


def backend_name() -> str:
    """Name of the backend currently in use."""
    return _active


def set_backend(name: str) -> str:
    """Switch backend (``auto``/``cython``/``numpy``); returns the active name."""
    global _active
    _active = _resolve(name)
    return _active


def spmm(indptr, indices, data, dense, out=None) -> np.ndarray:
    """Row-compressed sparse x dense product.

    ``dense`` must have one row per matrix column; summation runs in
    ascending nonzero order per row for reproducibility.
    """
    n_rows = indptr.shape[0] - 1
    if dense.ndim != 2:
        raise ValueError("dense operand must be 2-D")
    if indices.shape[0] and dense.shape[0] < 1:
        raise ValueError("dense operand has no rows")
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    if out is None:
        out = np.empty((n_rows, dense.shape[1]), dtype=np.float64)
    _BACKENDS[_active].csr_spmm(indptr, indices, data, dense, out)
    return out


def scatter_add_rows(acc, rows, vals) -> np.ndarray:
    """acc[rows[k]] += vals[k] with duplicate rows accumulating."""
    if acc.shape[1] != vals.shape[1] or rows.shape[0] != vals.shape[0]:
        raise ValueError("scatter shapes do not match")
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    _BACKENDS[_active].scatter_add_rows(acc, rows, vals)
    return acc
