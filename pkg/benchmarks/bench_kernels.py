"""Compare the compiled kernels against the NumPy fallback.

Each kernel runs on the same random inputs under every importable backend;
results are checked for agreement before timing. Usage::

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import timeit

import numpy as np

from cico.kernels import BACKEND, IMPLEMENTATIONS


def make_cases(rng):
    masks = rng.random((64, 128, 128)) < 0.3
    a, b = masks[0].ravel(), masks[1].ravel()
    x = rng.normal(size=(5, 34, 34, 8))
    w = rng.normal(size=(3, 3, 3, 8, 8))
    xy = rng.uniform(0, 200, size=(400, 2))
    wh = rng.uniform(5, 60, size=(400, 2))
    boxes = np.hstack([xy, xy + wh])
    order = np.argsort(-rng.random(400), kind="stable")
    # engine-sized inputs: one instance mask, a 3-frame head layer, a few dozen detections
    small = rng.random((64, 64)) < 0.05
    small[20:40, 10:30] = True
    xs = rng.normal(size=(3, 10, 10, 4))
    ws = rng.normal(size=(3, 3, 3, 4, 4))
    few, few_order = boxes[:30], order[order < 30]
    return {
        "rle_encode (64 x 128x128)": lambda k: [k.rle_encode(m) for m in masks],
        "rle roundtrip (64 x 128x128)": lambda k: [k.rle_decode(k.rle_encode(m), 128, 128) for m in masks],
        "inter_union (16k px)": lambda k: [k.inter_union(a, b) for _ in range(50)],
        "conv3d_valid (5x34x34x8, 3x3x3)": lambda k: k.conv3d_valid(x, w),
        "nms_order (400 boxes)": lambda k: k.nms_order(boxes, order, 0.5),
        "small rle roundtrip (64x64)": lambda k: [k.rle_decode(k.rle_encode(small), 64, 64) for _ in range(100)],
        "small conv3d_valid (3x10x10x4)": lambda k: [k.conv3d_valid(xs, ws) for _ in range(100)],
        "small nms_order (30 boxes)": lambda k: [k.nms_order(few, few_order, 0.5) for _ in range(100)],
    }


def same(x, y):
    if isinstance(x, list) and x and isinstance(x[0], (list, tuple, np.ndarray)):
        return all(same(p, q) for p, q in zip(x, y))
    return np.allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), atol=1e-9)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = sorted(IMPLEMENTATIONS)
    print(f"active backend: {BACKEND}; comparing {', '.join(names)}")
    cases = make_cases(np.random.default_rng(args.seed))
    header = f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names)
    if "cython" in names:
        header += f"{'speedup':>10s}"
    print(header)
    for label, fn in cases.items():
        outs = {n: fn(IMPLEMENTATIONS[n]) for n in names}
        if len(names) > 1 and not same(outs[names[0]], outs[names[1]]):
            raise SystemExit(f"{label}: backends disagree")
        times = {n: min(timeit.repeat(lambda: fn(IMPLEMENTATIONS[n]), number=1, repeat=args.repeat)) for n in names}
        row = f"{label:34s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if "cython" in names:
            row += f"{times['numpy'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
