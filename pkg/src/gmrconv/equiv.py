"""Equivariance measurements for convolution operators.

Two kinds of checks live here. The exact ones compare an operator against
quarter turns, flips (and the 48 cube symmetries in 3D), which a ring layer
commutes with up to rounding. The angle sweep rotates inputs by arbitrary
angles with bilinear resampling and reports

    E(theta) = rel_error(rotate(-theta)(op(rotate(theta)(x))), op(x))

on a central disk that excludes rotation fill and convolution borders. This
error metric is defined by this library for diagnostics; it is not an
accuracy figure. The same metric applied to the identity operator gives the
interpolation floor, reported next to every measurement.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .conv import ConvConfig, conv_direct, gmr_conv
from .kernel import (
    GaussianRingBasis,
    GmrLayerParams,
    build_basis,
    build_nearest_ring_basis,
    init_sigma,
    init_weights,
    ring_geometry,
)
from .tensor import (
    apply_cube_symmetry,
    central_disk_mask,
    cube_symmetries,
    flip,
    rel_error,
    rot90,
    rotate_bilinear,
)

Op = Callable[[np.ndarray], np.ndarray]

REPORT_VERSION = 1
DEFAULT_ANGLES = tuple(range(0, 360, 10))
METRIC = "rel_l2(rotate(-t).op.rotate(t)(x), op(x)) on disk r<=min(H,W)/2-k"


@dataclass(frozen=True)
class InputSpec:
    """Random test inputs: ``(batch, channels, size, size)`` Gaussian noise, optionally low-passed."""

    channels: int = 1
    size: int = 48
    batch: int = 1
    smooth: float = 0.0

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        x = rng.normal(size=(self.batch, self.channels, self.size, self.size))
        return _blur(x, self.smooth) if self.smooth > 0 else x


def _blur(x: np.ndarray, sigma: float) -> np.ndarray:
    r = int(np.ceil(3 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-t * t / (2 * sigma * sigma))
    g /= g.sum()
    for axis in (-2, -1):
        x = np.apply_along_axis(lambda v: np.convolve(v, g, mode="same"), axis, x)
    return x


def gmr_op(params: GmrLayerParams, basis: GaussianRingBasis | None = None) -> Op:
    cfg = ConvConfig(dims=params.geometry.dims)
    basis = basis or params.basis()
    return lambda x: gmr_conv(x, params, cfg, basis=basis)


def dense_op(kernel: np.ndarray) -> Op:
    return lambda x: conv_direct(x, kernel)


def identity_op(x: np.ndarray) -> np.ndarray:
    return x


def _symmetries_2d():
    yield "rot90", lambda t: rot90(t, 1)
    yield "rot180", lambda t: rot90(t, 2)
    yield "rot270", lambda t: rot90(t, 3)
    yield "flip_h", lambda t: flip(t, -1)
    yield "flip_v", lambda t: flip(t, -2)


def _symmetries_3d():
    for perm, flips in cube_symmetries():
        if perm == (0, 1, 2) and not any(flips):
            continue
        yield f"{perm}{flips}", (lambda t, p=perm, f=flips: apply_cube_symmetry(t, p, f))


def symmetry_errors(op: Op, x: np.ndarray, dims: int = 2) -> dict[str, float]:
    """Commutation error of ``op`` with every non-trivial grid symmetry."""
    y = op(x)
    group = _symmetries_2d() if dims == 2 else _symmetries_3d()
    return {name: rel_error(op(T(x)), T(y)) for name, T in group}


def check_exact_symmetry(params: GmrLayerParams, cfg: ConvConfig | None = None, trials: int = 20,
                         seed: int = 0, basis: GaussianRingBasis | None = None,
                         size: int | None = None) -> float:
    """Worst rot90/flip (or cube-symmetry) commutation error over random inputs.

    ``basis`` overrides the layer's own ring images, which lets tests inject a
    broken basis and confirm the check notices.
    """
    g = params.geometry
    cfg = cfg or ConvConfig(dims=g.dims)
    basis = basis or params.basis()
    size = size or (2 * g.k + 3 if g.dims == 2 else g.k + 4)
    op = lambda x: gmr_conv(x, params, cfg, basis=basis)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.normal(size=(2, params.c_in) + (size,) * g.dims)
        worst = max(worst, max(symmetry_errors(op, x, g.dims).values()))
    return worst


def reflection_check(op: Op, spec: InputSpec, seed: int = 0, trials: int = 1) -> float:
    """Worst flip commutation error over both spatial axes."""
    worst = 0.0
    for t in range(trials):
        x = spec.sample(np.random.default_rng([seed, t]))
        y = op(x)
        for axis in (-1, -2):
            worst = max(worst, rel_error(op(flip(x, axis)), flip(y, axis)))
    return worst


def rotation_error(op: Op, x: np.ndarray, angle: float, margin: int) -> float:
    """``E(angle)`` for one input; ``margin`` is the operator's kernel width."""
    H, W = x.shape[-2:]
    radius = min(H, W) / 2.0 - margin
    ref = op(x)
    back = rotate_bilinear(op(rotate_bilinear(x, angle)), -angle)
    return rel_error(central_disk_mask(back, radius), central_disk_mask(ref, radius))


@dataclass
class EquivarianceReport:
    angles: list[float]
    mean_error: list[float]
    std_error: list[float]
    floor_error: list[float]
    label: str = "op"
    metric: str = METRIC
    meta: dict = field(default_factory=dict)

    def error_at(self, angle: float) -> float:
        return self.mean_error[self.angles.index(angle)]

    def floor_at(self, angle: float) -> float:
        return self.floor_error[self.angles.index(angle)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# gmrconv equivariance report v{REPORT_VERSION}; label={self.label}; "
                  f"metric={self.metric}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["angle", "mean_error", "std_error", "floor_error"])
        for row in zip(self.angles, self.mean_error, self.std_error, self.floor_error):
            w.writerow([f"{row[0]:g}"] + [f"{v:.12e}" for v in row[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {"version": REPORT_VERSION, "kind": "equivariance", **asdict(self)}
        return json.dumps(payload, indent=2, sort_keys=True)


def angle_sweep(op: Op, spec: InputSpec, angles: Sequence[float] = DEFAULT_ANGLES,
                seed: int = 0, trials: int = 10, margin: int = 3,
                label: str = "op") -> EquivarianceReport:
    """Mean and spread of ``E(angle)`` over ``trials`` random inputs per angle.

    Inputs are seeded per (seed, angle index, trial) cell, so results do not
    depend on evaluation order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if spec.size < 4 * margin:
        raise ValueError(f"input size {spec.size} is below 4 x kernel width {margin}")
    means, stds, floors = [], [], []
    for ai, angle in enumerate(angles):
        if not np.isfinite(angle):
            raise ValueError(f"angle {angle} is not finite")
        errs, flo = [], []
        for t in range(trials):
            x = spec.sample(np.random.default_rng([seed, ai, t]))
            errs.append(rotation_error(op, x, angle, margin))
            flo.append(rotation_error(identity_op, x, angle, margin))
        means.append(float(np.mean(errs)))
        stds.append(float(np.std(errs)))
        floors.append(float(np.mean(flo)))
    return EquivarianceReport([float(a) for a in angles], means, stds, floors, label=label,
                              meta={"seed": seed, "trials": trials, "margin": margin,
                                    "input": asdict(spec)})


@dataclass(frozen=True)
class AblationResult:
    seed: int
    gmr_error: float
    nearest_error: float
    floor: float

    @property
    def gmr_wins(self) -> bool:
        return self.gmr_error - self.floor < self.nearest_error - self.floor


def smoothing_ablation(k: int = 9, n: int | None = None, seeds: Sequence[int] = range(10),
                       angle: float = 45.0, channels: int = 4, size: int = 48,
                       trials: int = 10) -> list[AblationResult]:
    """Smoothed rings against hard nearest-ring assignment, same ring weights per seed."""
    g = ring_geometry(k, n)
    spec = InputSpec(channels=channels, size=size)
    hard = build_nearest_ring_basis(g)
    smooth = build_basis(g, init_sigma(g))
    out = []
    for s in seeds:
        params = GmrLayerParams(g, init_weights(channels, channels, g.n, seed=s))
        errs = {"gmr": [], "hard": [], "floor": []}
        for t in range(trials):
            x = spec.sample(np.random.default_rng([s, t]))
            errs["gmr"].append(rotation_error(gmr_op(params, smooth), x, angle, k))
            errs["hard"].append(rotation_error(gmr_op(params, hard), x, angle, k))
            errs["floor"].append(rotation_error(identity_op, x, angle, k))
        out.append(AblationResult(s, *(float(np.mean(errs[key])) for key in ("gmr", "hard", "floor"))))
    return out

