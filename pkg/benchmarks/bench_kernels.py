"""Compare the compiled pixel kernels against the numpy fallback.

Run:  python3 benchmarks/bench_kernels.py
"""

import math
import time

import numpy as np

from tcd._kernels import _fallback

try:
    from tcd._kernels import _speedups
except ImportError:
    _speedups = None


def disk_rings(cx, cy, r, n=64):
    return [np.array(
        [(cx + r * math.cos(2 * math.pi * k / n),
          cy + r * math.sin(2 * math.pi * k / n)) for k in range(n)],
        dtype=np.float64,
    )]


def timeit(fn, repeats=5):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(name, make_args, repeats=5):
    args = make_args()
    t_py = timeit(lambda: getattr(_fallback, name)(*args), repeats)
    line = f"{name:<20} python {t_py * 1e3:8.2f} ms"
    if _speedups is not None:
        t_c = timeit(lambda: getattr(_speedups, name)(*args), repeats)
        line += f"   compiled {t_c * 1e3:8.2f} ms   speedup {t_py / t_c:5.1f}x"
    print(line)


def main():
    rng = np.random.default_rng(0)
    print("backend availability: compiled =", _speedups is not None)

    rings = []
    for _ in range(50):
        rings += disk_rings(rng.uniform(0, 2048), rng.uniform(0, 2048),
                            rng.uniform(10, 120))
    bench("rasterize_rings", lambda: (rings, 2048, 2048))

    pred = (rng.random((4096, 4096)) < 0.5).astype(np.uint8)
    gt = (rng.random((4096, 4096)) < 0.5).astype(np.uint8)
    bench("confusion_counts", lambda: (pred, gt))

    block = np.zeros((1024, 1024, 3), np.uint8)
    bench("block_all_equal", lambda: (block, 0))


if __name__ == "__main__":
    main()
