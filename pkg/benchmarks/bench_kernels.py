"""Time the compiled kernels against the numpy fallback on ranker/BM25-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from sessionaug import _fallback

try:
    from sessionaug import _kernels
except ImportError:
    _kernels = None


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def workloads(seed=0):
    rng = np.random.default_rng(seed)
    V, dim, n_seq = 2000, 64, 4096
    lens = rng.integers(8, 40, n_seq)
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    ids = rng.integers(0, V, offsets[-1]).astype(np.int64)
    E = rng.normal(size=(V, dim))
    rows = rng.permutation(n_seq).astype(np.int64)
    G = rng.normal(size=(n_seq, dim))

    n_docs, n_terms = 5000, 3000
    df = rng.integers(1, 60, n_terms)
    post_offsets = np.concatenate([[0], np.cumsum(df)]).astype(np.int64)
    post_docs = np.concatenate([np.sort(rng.choice(n_docs, d, replace=False)) for d in df]).astype(np.int64)
    post_weights = rng.random(post_offsets[-1])
    q_lens = rng.integers(1, 5, 500)
    q_offsets = np.concatenate([[0], np.cumsum(q_lens)]).astype(np.int64)
    q_ids = rng.integers(0, n_terms, q_offsets[-1]).astype(np.int64)

    def pool(impl):
        return lambda: impl.mean_pool(E, ids, offsets, rows)

    def pool_grad(impl):
        return lambda: impl.mean_pool_grad(G, ids, offsets, rows, np.zeros_like(E))

    def bm25(impl):
        return lambda: impl.bm25_accumulate(q_ids, q_offsets, post_offsets, post_docs, post_weights, n_docs)

    return {"mean_pool": pool, "mean_pool_grad": pool_grad, "bm25_accumulate": bm25}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':<16} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for name, make in workloads().items():
        py = _best(make(_fallback), args.repeat) * 1e3
        if _kernels is None:
            print(f"{name:<16} {py:>10.2f} {'n/a':>12} {'':>8}")
            continue
        c = _best(make(_kernels), args.repeat) * 1e3
        print(f"{name:<16} {py:>10.2f} {c:>12.2f} {py / c:>7.1f}x")


if __name__ == "__main__":
    main()
