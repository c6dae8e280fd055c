"""Compare the compiled and numpy quintic kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

For each problem size both backends evaluate the same queries; the table
reports the best wall time of `repeat` runs and checks the outputs agree bit
for bit. The last rows time a full synthetic-acceleration pass over a clip.
"""
import argparse
import time

import numpy as np

from posetransfer import _kernels_py, kernels
from posetransfer.signal import ChannelSeries, synthesize_obd


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        from posetransfer import _ckernels
    except ImportError:
        _ckernels = None
        print("compiled extension not built; only the numpy backend is timed")

    print(f"selected backend at import: {kernels.BACKEND}")
    print(f"{'samples':>8} {'queries':>8} {'order':>5} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'equal':>6}")
    rng = np.random.default_rng(0)
    for n, m in ((100, 400), (1_000, 4_000), (10_000, 40_000), (100_000, 400_000)):
        values = rng.normal(size=n)
        query = np.sort(rng.uniform(0, n - 1, m))
        for order in (0, 2):
            t_py = best_of(lambda: _kernels_py.quintic_eval(values, query, order), args.repeat)
            if _ckernels is None:
                print(f"{n:>8} {m:>8} {order:>5} {1e3 * t_py:>10.3f} {'-':>10} {'-':>8} {'-':>6}")
                continue
            t_c = best_of(lambda: _ckernels.quintic_eval(values, query, order), args.repeat)
            same = np.array_equal(_kernels_py.quintic_eval(values, query, order),
                                  _ckernels.quintic_eval(values, query, order))
            print(f"{n:>8} {m:>8} {order:>5} {1e3 * t_py:>10.3f} {1e3 * t_c:>10.3f} {t_py / t_c:>7.1f}x {str(same):>6}")

    # end to end: 60 s of 25 Hz pose on 30 channels synthesized at 100 Hz
    data = rng.normal(size=(30, 1501)).cumsum(axis=1)
    series = [ChannelSeries(row, 25.0) for row in data]
    t = best_of(lambda: [synthesize_obd(s, 100.0) for s in series], args.repeat)
    print(f"synthesize_obd, 30 channels x 60 s at 25 -> 100 Hz ({kernels.BACKEND}): {1e3 * t:.2f} ms")


if __name__ == "__main__":
    main()
