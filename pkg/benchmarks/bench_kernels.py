"""Compare the numba and numpy geometric kernels on augmentation-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is called once before timing so numba compilation is excluded.
Prints the best-of-N wall time per backend and the speedup.
"""

import argparse
import time

import numpy as np

from mmitf import kernels


def workloads(rng):
    # one base sample expanded to 4096 variants: 21 landmarks + 10 objects
    pts = rng.uniform(0, 1280, (31, 2))
    mats = rng.normal(size=(1024, 2, 3))
    tips = rng.uniform(0, 1280, (4096, 2))
    dips = tips + rng.normal(size=(4096, 2)) * 20
    cents = rng.uniform(0, 1280, (4096, 10, 2))
    dirs = rng.normal(size=(4096, 2))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    patch_pts = rng.uniform(0, 1280, (200_000, 2))
    return {
        "apply_affine": (pts, mats),
        "relation_angles": (tips, dips, cents),
        "line_distances": (tips, dirs, cents),
        "patch_indices": (patch_pts, 0.0, 288.0, 80.0, 108.0, 4, 16),
    }


def best_time(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if kernels.numba_kernels is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fargs in workloads(rng).items():
        t_np = best_time(getattr(kernels.numpy_kernels, name), fargs, args.repeat)
        t_nb = best_time(getattr(kernels.numba_kernels, name), fargs, args.repeat)
        print(f"{name:<18}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
