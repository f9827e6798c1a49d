"""Time the compiled and the vectorized numpy versions of each hot kernel.

Run with ``python3 benchmarks/bench_kernels.py``.  Each kernel is called
once untimed (so compilation is excluded), then timed over repeats; the largest
elementwise difference between the two outputs is reported alongside.
"""
import timeit

import numpy as np

from bridgelab import _kernels
from bridgelab.pseudo import eps_adjacency


def _inputs(rng):
    pts = rng.normal(size=(600, 8))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    adj = eps_adjacency(pts, 0.9)
    matches = rng.random((240, 240)) < 0.05
    matches[:, 0] = True
    dist = rng.random((64, 64 + 480))
    labels = rng.integers(0, 16, dist.shape[1])
    pos = labels[:64, None] == labels[None, :]
    pos[:, 64:] = False
    return {
        "dbscan_expand": (adj, 4),
        "ap_rows": (matches,),
        "hardest": (dist, pos, ~pos),
    }


def _max_diff(a, b):
    pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
    return max(float(np.abs(np.asarray(x, float) - np.asarray(y, float)).max(initial=0.0))
               for x, y in pairs)


def main(repeats=20):
    rng = np.random.default_rng(0)
    print(f"numba available: {_kernels.HAVE_NUMBA}; active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<15}{'numba ms':>12}{'numpy ms':>12}{'max diff':>12}")
    for name, args in _inputs(rng).items():
        fast, plain = _kernels.numba_impl[name], _kernels.numpy_impl[name]
        diff = _max_diff(fast(*args), plain(*args))
        t_fast = min(timeit.repeat(lambda: fast(*args), number=1, repeat=repeats))
        t_plain = min(timeit.repeat(lambda: plain(*args), number=1, repeat=repeats))
        print(f"{name:<15}{1e3 * t_fast:>12.3f}{1e3 * t_plain:>12.3f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
