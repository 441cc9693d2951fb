"""Convolution timing harness.

Every method sees the same random input. Each method gets ``warmup``
untimed calls, then ``repeats`` timed calls split into five batches; the
report keeps the total and the median batch time.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .conv import ConvConfig, conv_direct, get_backend, gmr_conv, op_count, use_backend
from .kernel import GmrLayerParams, init_sigma, init_weights, materialize_kernel, ring_geometry

REPORT_VERSION = 1
METHODS = ("direct_dense", "direct_materialized_gmr", "efficient_gmr")
BATCHES = 5


@dataclass
class BenchResult:
    method: str
    k: int
    n: int
    channels: int
    spatial: int
    batch: int
    repeats: int
    total_seconds: float
    median_batch_seconds: float
    per_call_us: float
    macs: int
    backend: str
    dtype: str


def _input(batch, channels, spatial, seed, dtype):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((batch, channels, spatial, spatial), dtype=np.float64).astype(dtype)


def checksum(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()[:16]


def _make_call(method, x, params, dense_kernel):
    cfg = ConvConfig()
    dt = x.dtype
    if method == "direct_dense":
        return lambda: conv_direct(x, dense_kernel, cfg)
    if method == "direct_materialized_gmr":
        return lambda: conv_direct(x, materialize_kernel(params).astype(dt), cfg)
    if method == "efficient_gmr":
        return lambda: gmr_conv(x, params, cfg)
    raise ValueError(f"unknown method {method!r}")


def time_call(fn: Callable[[], object], repeats: int, warmup: int) -> tuple[float, float]:
    """Total seconds over ``repeats`` calls and the median of five equal batches."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for _ in range(warmup):
        fn()
    sizes = [repeats // BATCHES + (1 if b < repeats % BATCHES else 0) for b in range(BATCHES)]
    batch_times = []
    for size in sizes:
        if size == 0:
            continue
        t0 = time.perf_counter()
        for _ in range(size):
            fn()
        batch_times.append(time.perf_counter() - t0)
    return float(sum(batch_times)), float(np.median(batch_times))


def run_bench(ks: Sequence[int], channels: int = 128, spatial: int = 64, batch: int = 2,
              repeats: int = 1000, warmup: int = 100, seed: int = 0,
              methods: Sequence[str] = METHODS, dtype=np.float32,
              backend: str | None = None, rings: int | None = None,
              stable: bool = False) -> tuple[list[BenchResult], str]:
    """Time every method at every kernel width; returns results and the input checksum."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    backend = backend or get_backend()
    x = _input(batch, channels, spatial, seed, dtype)
    results = []
    with use_backend(backend):
        for k in ks:
            g = ring_geometry(k, rings)
            params = GmrLayerParams(g, init_weights(channels, channels, g.n, seed), init_sigma(g))
            dense = np.random.default_rng([seed, k]).normal(
                0.0, np.sqrt(2.0 / (channels * k * k)), size=(channels, channels, k, k)
            ).astype(dtype)
            ops = op_count(None, k, g.n, channels, channels, (spatial, spatial))
            for method in methods:
                total, med = time_call(_make_call(method, x, params, dense), repeats, warmup)
                if stable:
                    total = med = 0.0
                macs = ops.gmr if method == "efficient_gmr" else ops.direct
                results.append(BenchResult(method, k, g.n, channels, spatial, batch, repeats,
                                           total, med, 1e6 * total / repeats, macs * batch,
                                           backend, np.dtype(dtype).name))
    return results, checksum(x)


def results_csv(results: Sequence[BenchResult], input_checksum: str) -> str:
    buf = io.StringIO()
    buf.write(f"# gmrconv bench report v{REPORT_VERSION}; input_sha256={input_checksum}\n")
    fields = list(asdict(results[0])) if results else [f for f in BenchResult.__dataclass_fields__]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerow(asdict(r))
    return buf.getvalue()


def results_json(results: Sequence[BenchResult], input_checksum: str) -> str:
    return json.dumps({"version": REPORT_VERSION, "kind": "bench", "input_sha256": input_checksum,
                       "results": [asdict(r) for r in results]}, indent=2, sort_keys=True)
