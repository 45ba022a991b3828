"""Compare the numba and pure-numpy kernel backends.

Times each kernel on tensors shaped like the default toy model's layers,
then one end-to-end relevance pass over the reference split, and prints a
table of median wall times and speed-ups.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import statistics
import time

import numpy as np

from relprune import _kernels as K
from relprune.lrp import relevance_aggregate
from relprune.toylab import SyntheticSpec, default_template, generate


def median_time(fn, repeat):
    fn()  # compile / warm caches
    samples = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return statistics.median(samples)


def kernel_cases(rng, batch):
    x1 = rng.normal(size=(batch, 1, 12, 12))
    w1 = rng.normal(size=(12, 1, 3, 3))
    x2 = rng.normal(size=(batch, 12, 6, 6))
    w2 = rng.normal(size=(20, 12, 3, 3))
    g2 = rng.normal(size=(batch, 20, 6, 6))
    b1, b2 = np.zeros(12), np.zeros(20)
    pool_in = rng.normal(size=(batch, 12, 12, 12))
    return {
        "conv1 forward": lambda k: k.conv2d_forward(x1, w1, b1, 1, 1),
        "conv2 forward": lambda k: k.conv2d_forward(x2, w2, b2, 1, 1),
        "conv2 backward input": lambda k: k.conv2d_backward_input(g2, w2, 6, 6, 1, 1),
        "conv2 backward weight": lambda k: k.conv2d_backward_weight(x2, g2, 3, 1, 1),
        "maxpool forward": lambda k: k.maxpool_forward(pool_in, 2, 2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=60)
    args = ap.parse_args()

    if not K.HAVE_NUMBA:
        print("numba is not importable; only the numpy backend can run")
        return
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in kernel_cases(rng, args.batch).items():
        t_np = median_time(lambda: fn(K.NUMPY_KERNELS), args.repeat)
        t_nb = median_time(lambda: fn(K.NUMBA_KERNELS), args.repeat)
        rows.append((name, t_np, t_nb))

    splits = generate(SyntheticSpec())
    model = default_template()
    refs = splits.refs
    saved = K.ACTIVE
    try:
        timings = {}
        for backend in (K.NUMPY_KERNELS, K.NUMBA_KERNELS):
            K.ACTIVE = backend
            timings[backend.name] = median_time(
                lambda: relevance_aggregate(model, refs.images, refs.labels), max(3, args.repeat // 4)
            )
    finally:
        K.ACTIVE = saved
    rows.append((f"relevance pass ({len(refs)} refs)", timings["numpy"], timings["numba"]))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'numpy ms':>10}  {'numba ms':>10}  {'speed-up':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<{width}}  {t_np * 1e3:10.3f}  {t_nb * 1e3:10.3f}  {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
