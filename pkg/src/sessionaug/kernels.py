"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``SESSIONAUG_PURE=1`` to force the numpy path.
"""

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("SESSIONAUG_PURE"):
        raise ImportError("pure-Python kernels requested")
    from . import _kernels as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def mean_pool(E, ids, offsets, rows):
    return _impl.mean_pool(_f64(E), _i64(ids), _i64(offsets), _i64(rows))


def mean_pool_grad(G, ids, offsets, rows, dE):
    if dE.dtype != np.float64 or not dE.flags.c_contiguous:
        raise TypeError("dE must be a C-contiguous float64 array")
    _impl.mean_pool_grad(_f64(G), _i64(ids), _i64(offsets), _i64(rows), dE)


def bm25_accumulate(q_ids, q_offsets, post_offsets, post_docs, post_weights, n_docs):
    return _impl.bm25_accumulate(
        _i64(q_ids), _i64(q_offsets), _i64(post_offsets), _i64(post_docs), _f64(post_weights), int(n_docs)
    )
