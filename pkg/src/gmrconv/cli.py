"""``gmrconv`` command line: benchmarks, parameter accounting, equivariance sweeps,
the training demo and kernel dumps.

Exit codes: 0 success, 2 usage error, 3 a failed ``--assert`` check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .conv import available_backends, get_backend, set_num_threads
from .equiv import DEFAULT_ANGLES, InputSpec, angle_sweep, check_exact_symmetry, gmr_op
from .io import FormatError, load_gmr
from .kernel import (
    GmrLayerParams,
    build_basis,
    init_sigma,
    init_weights,
    materialize_kernel,
    parameter_count,
    ring_geometry,
)

EXIT_OK, EXIT_USAGE, EXIT_ASSERT = 0, 2, 3

log = logging.getLogger("gmrconv")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _angles(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:step`` (stop exclusive)."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            return [float(a) for a in np.arange(start, stop, step)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad angle list {text!r}")


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _emit(args, text: str):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive, default=1, help="worker threads for the conv engines")
    p.add_argument("--stable-output", action="store_true",
                   help="zero wall times and timestamps so reports are byte-reproducible")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--assert", dest="check", action="store_true",
                   help="verify the command's acceptance condition; exit 3 on failure")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="gmrconv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", parents=[common], help="time dense vs ring convolutions")
    b.add_argument("--k", type=_int_list, default=[3, 5, 7, 9, 11])
    b.add_argument("--rings", type=_positive, default=None, help="ring count (default (k+1)/2)")
    b.add_argument("--channels", type=_positive, default=128)
    b.add_argument("--spatial", type=_positive, default=64)
    b.add_argument("--batch", type=_positive, default=2)
    b.add_argument("--repeats", type=_positive, default=1000)
    b.add_argument("--warmup", type=_non_negative, default=100)
    b.add_argument("--methods", default=",".join(bench_mod.METHODS))
    b.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    b.add_argument("--backend", choices=available_backends(), default=get_backend())
    b.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", parents=[common], help="parameter counts, ring vs dense")
    p.add_argument("--k", type=_int_list, default=[9])
    p.add_argument("--rings", type=_positive, default=None)
    p.add_argument("--channels", type=_int_list, default=[64])
    p.add_argument("--dims", type=int, choices=(2, 3), default=2)
    p.set_defaults(func=cmd_params)

    e = sub.add_parser("equiv", parents=[common], help="rotation equivariance sweep")
    e.add_argument("--k", type=_positive, default=9)
    e.add_argument("--rings", type=_positive, default=None)
    e.add_argument("--channels", type=_positive, default=4)
    e.add_argument("--spatial", type=_positive, default=48)
    e.add_argument("--angles", type=_angles, default=list(DEFAULT_ANGLES))
    e.add_argument("--trials", type=_positive, default=10)
    e.add_argument("--basis", choices=("gmr", "nearest"), default="gmr")
    e.set_defaults(func=cmd_equiv)

    t = sub.add_parser("train-demo", parents=[common], help="train ring and dense twins")
    t.add_argument("config", nargs="?", help="JSON file overriding demo settings")
    t.add_argument("--angles", type=_angles, default=None)
    t.set_defaults(func=cmd_train_demo)

    d = sub.add_parser("dump-kernel", parents=[common], help="print kernel values as a CSV grid")
    d.add_argument("params_file")
    which = d.add_mutually_exclusive_group()
    which.add_argument("--ring", type=int, help="dump one ring image of the basis")
    which.add_argument("--full", action="store_true", help="dump materialized kernels (default)")
    d.add_argument("--out-channel", type=int, default=None)
    d.add_argument("--in-channel", type=int, default=None)
    d.set_defaults(func=cmd_dump_kernel)
    return parser


# commands

def cmd_bench(args) -> int:
    methods = [m for m in args.methods.split(",") if m]
    unknown = set(methods) - set(bench_mod.METHODS)
    if unknown:
        raise _Usage(f"unknown methods {sorted(unknown)}")
    results, digest = bench_mod.run_bench(
        args.k, channels=args.channels, spatial=args.spatial, batch=args.batch,
        repeats=args.repeats, warmup=args.warmup, seed=args.seed, methods=methods,
        dtype=np.dtype(args.dtype), backend=args.backend, rings=args.rings,
        stable=args.stable_output,
    )
    log.info("input checksum %s", digest)
    print(f"# input checksum {digest}", file=sys.stderr)
    text = (bench_mod.results_json(results, digest) if args.format == "json"
            else bench_mod.results_csv(results, digest))
    _emit(args, text)
    if not args.check:
        return EXIT_OK
    ok = True
    by = {(r.method, r.k): r for r in results}
    for k in args.k:
        eff, mat = by.get(("efficient_gmr", k)), by.get(("direct_materialized_gmr", k))
        if eff and mat and not args.stable_output and not eff.total_seconds < mat.total_seconds:
            print(f"FAIL k={k}: efficient {eff.total_seconds:.3f}s >= materialized "
                  f"{mat.total_seconds:.3f}s", file=sys.stderr)
            ok = False
    return EXIT_OK if ok else EXIT_ASSERT


def cmd_params(args) -> int:
    rows = []
    for k in args.k:
        g = ring_geometry(k, args.rings, args.dims)
        for c in args.channels:
            gmr, dense = parameter_count(c, c, g)
            rows.append({"k": k, "n": g.n, "dims": g.dims, "c_in": c, "c_out": c,
                         "gmr_params": gmr, "dense_params": dense,
                         "compression": round(dense / gmr, 4)})
    if args.format == "json":
        text = json.dumps({"version": 1, "kind": "params", "rows": rows}, indent=2, sort_keys=True)
    else:
        buf = io.StringIO()
        buf.write("# gmrconv params report v1\n")
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    _emit(args, text)
    return EXIT_OK


def cmd_equiv(args) -> int:
    g = ring_geometry(args.k, args.rings)
    params = GmrLayerParams(g, init_weights(args.channels, args.channels, g.n, args.seed),
                            init_sigma(g))
    if args.basis == "nearest":
        from .kernel import build_nearest_ring_basis
        basis = build_nearest_ring_basis(g)
    else:
        basis = build_basis(g, params.sigma)
    spec = InputSpec(channels=args.channels, size=args.spatial)
    report = angle_sweep(gmr_op(params, basis), spec, args.angles, seed=args.seed,
                         trials=args.trials, margin=args.k, label=f"{args.basis}_k{args.k}")
    exact = check_exact_symmetry(params, trials=3, seed=args.seed, basis=basis)
    report.meta["exact_symmetry_error"] = exact
    _emit(args, report.to_json() if args.format == "json" else report.to_csv())
    if args.check:
        failures = []
        if exact > 1e-10:
            failures.append(f"quarter-turn/flip error {exact:.3e} > 1e-10")
        for a, e in zip(report.angles, report.mean_error):
            if a % 90 == 0 and e > (1e-12 if a % 360 == 0 else 1e-10):
                failures.append(f"E({a:g}) = {e:.3e} on a grid-aligned angle")
        for f in failures:
            print("FAIL " + f, file=sys.stderr)
        return EXIT_ASSERT if failures else EXIT_OK
    return EXIT_OK


def cmd_train_demo(args) -> int:
    from .demo import DemoConfig, demo_passes, run_demo

    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise _Usage(f"cannot read config {args.config}: {exc}")
    overrides.setdefault("seed", args.seed)
    if args.angles is not None:
        overrides["angles"] = args.angles
    try:
        cfg = DemoConfig.from_dict(overrides)
    except (TypeError, ValueError) as exc:
        raise _Usage(str(exc))
    out_dir = Path(args.out) if args.out else None
    metrics = run_demo(cfg, out_dir=out_dir, stable=args.stable_output)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if out_dir:
        (out_dir / "metrics.json").write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    if args.check:
        ok, reasons = demo_passes(metrics)
        for r in reasons:
            print("FAIL " + r, file=sys.stderr)
        return EXIT_OK if ok else EXIT_ASSERT
    return EXIT_OK


def cmd_dump_kernel(args) -> int:
    try:
        params = load_gmr(args.params_file)
    except (OSError, FormatError) as exc:
        raise _Usage(f"cannot load {args.params_file}: {exc}")
    if params.geometry.dims != 2:
        raise _Usage("dump-kernel writes 2D grids only")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if args.ring is not None:
        if not 0 <= args.ring < params.geometry.n:
            raise _Usage(f"ring index {args.ring} outside 0..{params.geometry.n - 1}")
        buf.write(f"# ring {args.ring}\n")
        for row in params.basis().M[args.ring]:
            w.writerow([repr(float(v)) for v in row])
    else:
        K = materialize_kernel(params)
        outs = range(params.c_out) if args.out_channel is None else [args.out_channel]
        ins = range(params.c_in) if args.in_channel is None else [args.in_channel]
        for o in outs:
            for c in ins:
                if not (0 <= o < params.c_out and 0 <= c < params.c_in):
                    raise _Usage(f"channel pair ({o}, {c}) out of range")
                buf.write(f"# out {o} in {c}\n")
                for row in K[o, c]:
                    w.writerow([repr(float(v)) for v in row])
    _emit(args, buf.getvalue())
    return EXIT_OK


class _Usage(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    set_num_threads(args.threads)
    try:
        return args.func(args)
    except _Usage as exc:
        parser.error(str(exc))  # exits 2
    except ValueError as exc:
        print(f"gmrconv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
