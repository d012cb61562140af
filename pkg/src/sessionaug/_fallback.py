"""Pure numpy implementations of the hot kernels.

Accumulation order matches the compiled versions in ``_kernels.pyx`` so both
paths agree to the last bit on ordinary inputs.
"""

import numpy as np


def _spans(offsets, rows):
    starts = offsets[rows]
    lens = offsets[rows + 1] - starts
    return starts, lens


def _gather_index(starts, lens):
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    seg_begin = np.repeat(np.cumsum(lens) - lens, lens)
    return np.repeat(starts, lens) + (np.arange(total) - seg_begin)


def mean_pool(E, ids, offsets, rows):
    """Row ``i`` of the result is the mean of ``E[ids[offsets[r]:offsets[r+1]]]`` for ``r = rows[i]``."""
    rows = np.asarray(rows, dtype=np.int64)
    starts, lens = _spans(offsets, rows)
    if np.any(lens <= 0):
        raise ValueError("empty sequence in mean_pool")
    # add token k of every row at step k: same left-to-right order as the compiled loop
    sums = E[ids[starts]].copy()
    for k in range(1, int(lens.max(initial=0))):
        live = np.flatnonzero(lens > k)
        sums[live] += E[ids[starts[live] + k]]
    return sums / lens[:, None]


def mean_pool_grad(G, ids, offsets, rows, dE):
    """Accumulate the gradient of ``mean_pool`` w.r.t. ``E`` into ``dE`` in place."""
    rows = np.asarray(rows, dtype=np.int64)
    starts, lens = _spans(offsets, rows)
    flat = ids[_gather_index(starts, lens)]
    scaled = G / lens[:, None]
    np.add.at(dE, flat, np.repeat(scaled, lens, axis=0))


def bm25_accumulate(q_ids, q_offsets, post_offsets, post_docs, post_weights, n_docs):
    """Sum precomputed posting weights for every query term occurrence.

    Returns a ``(n_queries, n_docs)`` score matrix.
    """
    n_q = len(q_offsets) - 1
    out = np.zeros((n_q, n_docs), dtype=np.float64)
    for qi in range(n_q):
        row = out[qi]
        for t in q_ids[q_offsets[qi]:q_offsets[qi + 1]]:
            a, b = post_offsets[t], post_offsets[t + 1]
            if a != b:
                row[post_docs[a:b]] += post_weights[a:b]
    return out
