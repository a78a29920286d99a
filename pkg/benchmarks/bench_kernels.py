"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel: best-of-N wall time for each backend and the
speed-up. Inputs are sized like one training batch / one 3 s clip.
"""

import argparse
import time

import numpy as np

from sspitch import _kernels_py as py
from sspitch.cqt import CqtConfig, _kernel_bank

try:
    from sspitch import _kernels as cy
except ImportError:
    cy = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    cfg = CqtConfig()
    kr, ki, offsets, lengths = _kernel_bank(cfg)
    n = 3 * cfg.sample_rate
    pad = int(lengths.max()) // 2 + 1
    xpad = np.zeros(n + 2 * pad + cfg.hop)
    xpad[pad:pad + n] = rng.normal(size=n) * 0.1
    starts = (pad - lengths // 2).astype(np.int64)
    cqt_args = (xpad, kr, ki, offsets, lengths, starts, cfg.hop, n // cfg.hop + 1)

    # one grouped 3-tap conv of the middle stage on a 128-frame batch
    b, lp, cin, cout, k, groups = 128, 271, 64, 64, 3, 4
    lout = lp - k + 1
    flat = rng.normal(size=(b * lp, cin)).astype(np.float32)
    wt = rng.normal(size=(k, cin // groups, cout)).astype(np.float32)
    gout = rng.normal(size=(b * lp, cout)).astype(np.float32)

    def conv_fwd(mod):
        out = np.zeros((b * lp, cout), dtype=np.float32)
        mod.conv_taps_forward(flat, wt, out, groups, lp, lout)

    def conv_bwd(mod):
        mod.conv_taps_backward(flat, wt, gout, np.zeros_like(wt), np.zeros_like(flat),
                               groups, lp, lout)

    x = rng.normal(size=(b, 269, 64)).astype(np.float32)
    frames = rng.normal(size=(200, 2048))
    return {
        "cqt_direct (3 s clip)": lambda m: m.cqt_direct(*cqt_args),
        "conv_taps_forward": conv_fwd,
        "conv_taps_backward": conv_bwd,
        "instance_norm_forward": lambda m: m.instance_norm_forward(x, 1e-5),
        "overlap_add": lambda m: m.overlap_add(frames, 512, 512 * 199 + 2048),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'python s':>10}{'cython s':>10}{'speed-up':>10}")
    for name, fn in cases(rng).items():
        t_py = best_of(lambda: fn(py), args.repeat)
        if cy is None:
            print(f"{name:<26}{t_py:>10.4f}{'n/a':>10}{'':>10}")
            continue
        t_cy = best_of(lambda: fn(cy), args.repeat)
        print(f"{name:<26}{t_py:>10.4f}{t_cy:>10.4f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
