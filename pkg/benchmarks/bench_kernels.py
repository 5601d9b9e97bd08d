"""Time every hot kernel on the compiled and the numpy backend.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel runs on the same inputs under both backends; the table reports
the best of ``--repeat`` runs and the speed-up of the compiled build.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from soyyield import kernels


def cases(rng):
    img = rng.random((1080, 1920, 3))
    yy, xx = np.mgrid[0:1080, 0:1920].astype(np.float64)
    mx = xx * 0.9 + 40 + rng.normal(0, 0.3, xx.shape)
    my = yy * 0.9 + 20 + rng.normal(0, 0.3, yy.shape)

    x = rng.normal(size=(8, 64, 9, 9))
    w = rng.normal(size=(64, 64, 3, 3))
    b = rng.normal(size=64)
    g = rng.normal(size=(8, 64, 9, 9))
    xe = rng.normal(size=(20, 3, 72, 72))
    we = rng.normal(size=(16, 3, 3, 3))
    be = np.zeros(16)

    xp = rng.normal(size=(8, 64, 18, 18))
    mask = rng.random((720, 720)) < 0.4
    field = rng.normal(size=(26, 25))
    valid = np.ones((26, 25), dtype=np.uint8)
    offs = np.array([(a, c) for a in range(-2, 3) for c in range(-2, 3)
                     if (a, c) != (0, 0) and not (abs(a) == 2 and abs(c) == 2)], dtype=np.int64)

    def pool_bwd(k):
        out, idx = k.maxpool2d_forward(xp, 2, 2)
        return lambda: k.maxpool2d_backward(out, idx, xp.shape)

    return [
        ("remap_bilinear 1920x1080x3", lambda k: lambda: k.remap_bilinear(img, mx, my, 0.0)),
        ("conv2d_forward head 8x64x9x9", lambda k: lambda: k.conv2d_forward(x, w, b, 1, 1)),
        ("conv2d_forward stem 20x3x72x72 s2", lambda k: lambda: k.conv2d_forward(xe, we, be, 2, 1)),
        ("conv2d_backward head 8x64x9x9", lambda k: lambda: k.conv2d_backward(x, w, g, 1, 1)),
        ("maxpool2d_forward 8x64x18x18", lambda k: lambda: k.maxpool2d_forward(xp, 2, 2)),
        ("maxpool2d_backward 8x64x18x18", pool_bwd),
        ("label_components 720x720", lambda k: lambda: k.label_components(mask)),
        ("moving_means 26x25", lambda k: lambda: k.moving_means(field, valid, offs)),
    ]


def best_time(fn, repeat):
    number = 1
    # scale the loop count so one measurement takes at least ~50 ms
    while True:
        t = timeit.timeit(fn, number=number)
        if t >= 0.05 or number >= 1000:
            break
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write results as JSON")
    args = ap.parse_args(argv)

    names = sorted(kernels.BACKENDS)
    if "cython" not in names:
        print("compiled backend not built; timing the numpy backend only", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<36}" + "".join(f"{n + ' (ms)':>16}" for n in names) + f"{'speed-up':>12}")
    for label, make in cases(rng):
        times = {n: best_time(make(kernels.BACKENDS[n]), args.repeat) for n in names}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        rows.append({"kernel": label, **{f"{n}_s": t for n, t in times.items()}, "speedup": speed})
        print(f"{label:<36}" + "".join(f"{times[n] * 1e3:>16.3f}" for n in names) + f"{speed:>11.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    main()
