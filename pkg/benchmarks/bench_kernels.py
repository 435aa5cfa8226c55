"""Time the numba and pure-numpy kernel backends on representative inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

The numpy backend is what runs when DIFFEDITOR_DISABLE_NUMBA=1 is set.
"""

import argparse
import time

import numpy as np

from diffeditor import kernels


def best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)

    dist = rng.random((400, 400))
    frames = rng.standard_normal((200, 1024))
    cases = {
        "dtw 400x400": (
            lambda: kernels.dtw_accumulate_numpy(dist),
            lambda: kernels.dtw_accumulate_numba(dist),
        ),
        "autocorr 200x1024": (
            lambda: kernels.autocorr_frames_numpy(frames, 40, 340),
            lambda: kernels.autocorr_frames_numba(frames, 40, 340),
        ),
    }
    print(f"numba available: {kernels.NUMBA_AVAILABLE} (active backend: {kernels.BACKEND})")
    print(f"{'kernel':<20}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, (np_fn, nb_fn) in cases.items():
        a, b = np_fn(), nb_fn()
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-9)
        t_np, t_nb = best_of(np_fn, args.repeat), best_of(nb_fn, args.repeat)
        print(f"{name:<20}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
