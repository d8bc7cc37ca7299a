"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from semhide import _accel, kernels


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    fx, fy = rng.random((60, 64, 64)), rng.random((60, 64, 64))
    taps = kernels.gaussian_window()
    scores = rng.random(20_000)
    labels = (rng.random(20_000) < 0.5).astype(np.int64)
    x = np.sort(rng.random(200_000))
    y = rng.random(200_000)
    a, b = np.sort(rng.normal(size=500_000)), np.sort(rng.normal(size=500_000))
    return {
        "ssim_frames (60x64x64)": (kernels.ssim_frames_nb, kernels.ssim_frames_np, (fx, fy, taps, 1e-4, 9e-4)),
        "roc_sweep (20k scores)": (kernels.roc_sweep_nb, kernels.roc_sweep_np, (scores, labels)),
        "trapezoid (200k points)": (kernels.trapezoid_nb, kernels.trapezoid_np, (y, x)),
        "w1_sorted (500k values)": (kernels.w1_sorted_nb, kernels.w1_sorted_np, (a, b)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (nb, np_fn, inputs) in cases().items():
        nb(*inputs)  # compile
        t_nb = _best(lambda: nb(*inputs), args.repeat)
        t_np = _best(lambda: np_fn(*inputs), args.repeat)
        print(f"{name:<26}{t_nb * 1e3:>10.2f}{t_np * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
