"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from ddan import _fallback

try:
    from ddan import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    x = np.sort(rng.normal(size=2000))
    y = np.sort(rng.normal(size=1500))
    emb = rng.normal(size=(64, 64))
    dist = np.linalg.norm(emb[:, None] - emb[None], axis=2)
    labels = np.repeat(np.arange(16), 4).astype(np.int64)
    sim = rng.normal(size=(100, 400))
    probe = np.arange(100, dtype=np.int64)
    gallery = np.concatenate([np.arange(100), rng.integers(0, 100, size=300)]).astype(np.int64)
    return {
        "wasserstein_1d_sorted (2000 vs 1500)": ("wasserstein_1d_sorted", (x, y)),
        "batch_hard_indices (64 x 64)": ("batch_hard_indices", (dist, labels)),
        "rank_metrics (100 probes x 400 gallery)": ("rank_metrics", (sim, probe, gallery)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = [("numpy", _fallback)] + ([("cython", _kernels)] if _kernels else [])
    print(f"{'kernel':42s}" + "".join(f"{n:>12s}" for n, _ in impls) + "     speedup")
    for label, (fn, inputs) in cases(rng).items():
        times = []
        for _, mod in impls:
            f = getattr(mod, fn)
            number = max(1, int(0.2 / max(timeit.timeit(lambda: f(*inputs), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: f(*inputs), number=number, repeat=args.repeat))
            times.append(best / number)
        speed = f"{times[0] / times[1]:10.1f}x" if len(times) == 2 else "   (no ext)"
        print(f"{label:42s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times) + speed)


if __name__ == "__main__":
    main()
