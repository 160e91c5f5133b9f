"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best time for each backend and the
speed-up.  Both backends are checked for identical results first.
"""
import argparse
import random
import timeit

import numpy as np

from hearthmesh import _kernels_py as py

try:
    from hearthmesh import _ckernels as cy
except ImportError:
    cy = None


def random_csr(n, degree, seed):
    rng = random.Random(seed)
    adj = [set() for _ in range(n)]
    for u in range(1, n):
        v = rng.randrange(u)  # spanning tree keeps it connected
        adj[u].add(v)
        adj[v].add(u)
    for _ in range(n * (degree - 2) // 2):
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    indptr = np.zeros(n + 1, dtype=np.int32)
    indices = []
    for u in range(n):
        indices += sorted(adj[u])
        indptr[u + 1] = len(indices)
    return indptr, np.array(indices, dtype=np.int32)


def workloads(n):
    indptr, indices = random_csr(n, 4, seed=1)
    alive = np.ones(n, dtype=np.uint8)
    lat = np.full(len(indices), 15.0)
    times = np.sort(np.random.default_rng(1).uniform(0, 100_000, 20_000))

    def flood_args():
        return (indptr, indices, lat, alive, np.zeros(n, dtype=np.uint8), np.zeros(n),
                np.zeros(n + 1, dtype=np.int64), np.zeros(0), np.zeros(n, dtype=np.int64), np.zeros(0),
                np.full(n, 5.0), 64, 0, n, 0.0, None)

    return {
        f"all_pairs n={n}": lambda k: k.all_pairs(indptr, indices, alive),
        f"bfs x{n} n={n}": lambda k: [k.bfs(indptr, indices, alive, s) for s in range(n)],
        f"flood n={n}": lambda k: k.flood(*flood_args()),
        "queue_run 20k": lambda k: k.queue_run(times, 0.0, 5.0, 64),
    }


def same(a, b):
    if isinstance(a, (tuple, list)):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b, equal_nan=True)
    return a == b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=200)
    args = ap.parse_args()
    if cy is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'kernel':<22}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, fn in workloads(args.nodes).items():
        assert same(fn(py), fn(cy)), f"backends disagree on {name}"
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{tp:>12.2f}{tc:>12.3f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
