# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: mean pooling over embedding rows and BM25 accumulation."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def mean_pool(double[:, ::1] E, long long[::1] ids, long long[::1] offsets, rows):
    cdef long long[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0], dim = E.shape[1]
    out_arr = np.zeros((n, dim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k, start, stop, row
    cdef double length
    for i in range(n):
        row = r[i]
        start = offsets[row]
        stop = offsets[row + 1]
        if stop <= start:
            raise ValueError("empty sequence in mean_pool")
        for j in range(dim):
            out[i, j] = E[ids[start], j]
        for k in range(start + 1, stop):
            for j in range(dim):
                out[i, j] += E[ids[k], j]
        length = <double>(stop - start)
        for j in range(dim):
            out[i, j] = out[i, j] / length
    return out_arr


def mean_pool_grad(double[:, ::1] G, long long[::1] ids, long long[::1] offsets, rows,
                   double[:, ::1] dE):
    cdef long long[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0], dim = G.shape[1]
    cdef Py_ssize_t i, j, k, start, stop, row
    cdef double length
    cdef double[::1] scaled = np.empty(dim, dtype=np.float64)
    for i in range(n):
        row = r[i]
        start = offsets[row]
        stop = offsets[row + 1]
        length = <double>(stop - start)
        for j in range(dim):
            scaled[j] = G[i, j] / length
        for k in range(start, stop):
            for j in range(dim):
                dE[ids[k], j] += scaled[j]


def bm25_accumulate(long long[::1] q_ids, long long[::1] q_offsets,
                    long long[::1] post_offsets, long long[::1] post_docs,
                    double[::1] post_weights, Py_ssize_t n_docs):
    cdef Py_ssize_t n_q = q_offsets.shape[0] - 1
    out_arr = np.zeros((n_q, n_docs), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t qi, k, p
    cdef long long t
    for qi in range(n_q):
        for k in range(q_offsets[qi], q_offsets[qi + 1]):
            t = q_ids[k]
            for p in range(post_offsets[t], post_offsets[t + 1]):
                out[qi, post_docs[p]] += post_weights[p]
    return out_arr
