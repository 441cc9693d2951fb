"""Compiled vs numpy kernels for the depthwise ring stage and its two gradients.

    python benchmarks/bench_backends.py --k 5 9 --channels 16 --spatial 48 --repeats 20

Prints one CSV row per (k, kernel, backend) plus the speedup of the compiled
core. Both backends are checked against each other before timing.
"""

import argparse
import csv
import sys
import time

import numpy as np

from gmrconv.conv import (
    ConvConfig,
    available_backends,
    gmr_conv,
    gmr_conv_backward,
    gmr_stage1,
    use_backend,
)
from gmrconv.kernel import init_layer


def _time(fn, repeats, warmup=2):
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, nargs="+", default=[5, 9])
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--spatial", type=int, default=48)
    ap.add_argument("--batch", type=int, default=2)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    args = ap.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend not built; only the numpy path is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.batch, args.channels, args.spatial, args.spatial)).astype(args.dtype)
    cfg = ConvConfig()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["k", "kernel", "backend", "seconds_per_call", "speedup_vs_python"])
    for k in args.k:
        p = init_layer(args.channels, args.channels, k, seed=k)
        basis = p.basis()
        gout = rng.standard_normal(gmr_conv(x, p, cfg, basis=basis).shape)
        cases = {
            "stage1": lambda: gmr_stage1(x, basis, cfg),
            "forward": lambda: gmr_conv(x, p, cfg, basis=basis),
            "backward": lambda: gmr_conv_backward(x, p, cfg, gout),
        }
        for name, fn in cases.items():
            times, outs = {}, {}
            for b in backends:
                with use_backend(b):
                    outs[b] = fn()
                    times[b] = _time(fn, args.repeats)
            if len(outs) == 2:
                a, c = (np.asarray(outs[b][0] if isinstance(outs[b], tuple) else outs[b])
                        for b in backends)
                if not np.allclose(a, c, rtol=1e-4, atol=1e-6):
                    raise SystemExit(f"backends disagree on {name} at k={k}")
            for b in backends:
                speed = times["python"] / times[b] if "python" in times else float("nan")
                w.writerow([k, name, b, f"{times[b]:.6f}", f"{speed:.2f}"])


if __name__ == "__main__":
    main()
