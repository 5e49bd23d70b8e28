"""Time the numba and numpy kernel backends on the reference network's shapes.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 128]

Prints per-kernel milliseconds for both backends, the speed-up, and the
largest absolute difference between their outputs.
"""

import argparse
import time

import numpy as np

from retinervenet import kernels as K

# (channels_in, length, channels_out, width, stride, padding); the batch
# multiplier is 7 for layers that run on all recursive passes at once
SHAPES = [
    ("block1.conv0", 1, 1, 384, 32, 7, 2, 3),
    ("block1.conv1", 1, 32, 96, 18, 5, 2, 2),
    ("block1.skip", 1, 1, 384, 18, 8, 8, 0),
    ("rpl", 1, 18, 48, 18, 3, 1, 1),
    ("block3.conv0", 7, 18, 48, 14, 5, 1, 0),
    ("block3.conv1", 7, 14, 44, 15, 5, 1, 0),
    ("block3.skip", 7, 18, 48, 15, 10, 2, 0),
    ("block4", 7, 15, 20, 1, 3, 1, 1),
]


def _time(fn, repeat):
    fn()
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t) / repeat * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=128)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'layer':<14}{'pass':>5}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max|diff|':>11}")
    tot = {"numba": 0.0, "numpy": 0.0}
    for name, mult, c, length, o, w, s, p in SHAPES:
        x = rng.normal(size=(args.batch * mult, c, length))
        wt = rng.normal(size=(o, c, w))
        b = rng.normal(size=o)
        out_len = K.conv_out_length(length, w, s, p)
        g = rng.normal(size=(x.shape[0], o, out_len))
        for direction in ("fwd", "bwd"):
            if direction == "fwd":
                fa = lambda: K.conv1d_forward_numba(x, wt, b, s, p)
                fb = lambda: K.conv1d_forward_numpy(x, wt, b, s, p)
                diff = np.abs(fa() - fb()).max()
            else:
                fa = lambda: K.conv1d_backward_numba(g, x, wt, s, p)
                fb = lambda: K.conv1d_backward_numpy(g, x, wt, s, p)
                diff = max(np.abs(u - v).max() for u, v in zip(fa(), fb()))
            ta, tb = _time(fa, args.repeat), _time(fb, args.repeat)
            tot["numba"] += ta
            tot["numpy"] += tb
            print(f"{name:<14}{direction:>5}{ta:10.3f}{tb:10.3f}{tb / ta:9.2f}{diff:11.2e}")
    x = rng.normal(size=(args.batch * 7, 1, 20))
    ta = _time(lambda: K.maxpool1d_forward_numba(x, 2), args.repeat)
    tb = _time(lambda: K.maxpool1d_forward_numpy(x, 2), args.repeat)
    print(f"{'maxpool':<14}{'fwd':>5}{ta:10.3f}{tb:10.3f}{tb / ta:9.2f}")
    print(f"{'conv total':<19}{tot['numba']:10.3f}{tot['numpy']:10.3f}{tot['numpy'] / tot['numba']:9.2f}")


if __name__ == "__main__":
    main()
