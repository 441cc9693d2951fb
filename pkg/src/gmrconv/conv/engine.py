"""Dense and two-stage ring convolutions with their reverse-mode gradients.

All convolutions are cross-correlations (no kernel flip) with zero padding.
Ring bases are flip-symmetric, so the distinction never changes a ring
layer's output.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..kernel import GaussianRingBasis, GmrLayerParams, basis_sigma_jacobian
from . import _backend


class ShapeError(ValueError):
    """Input, kernel and configuration extents are incompatible."""


class EquivarianceWarning(UserWarning):
    """A stride larger than one breaks the rotation/reflection equivariance guarantee."""


@dataclass(frozen=True)
class ConvConfig:
    """Stride and zero padding of a convolution.

    ``padding=None`` means "same" padding of ``k // 2`` on every spatial axis.
    """

    stride: int = 1
    padding: int | tuple[int, ...] | None = None
    dims: int = 2

    def __post_init__(self):
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.dims not in (2, 3):
            raise ShapeError(f"dims must be 2 or 3, got {self.dims}")
        pads = (self.padding,) if isinstance(self.padding, int) else (self.padding or ())
        if any(p < 0 for p in pads):
            raise ShapeError(f"padding must be >= 0, got {self.padding}")

    @property
    def equivariant(self) -> bool:
        return self.stride == 1

    def pads(self, ksize: Sequence[int]) -> tuple[int, ...]:
        if self.padding is None:
            return tuple(k // 2 for k in ksize)
        if isinstance(self.padding, int):
            return (self.padding,) * len(ksize)
        if len(self.padding) != len(ksize):
            raise ShapeError(f"padding {self.padding} does not match {len(ksize)} spatial axes")
        return tuple(self.padding)


def output_shape(spatial: Sequence[int], ksize: Sequence[int], pads: Sequence[int],
                 stride: int) -> tuple[int, ...]:
    out = []
    for s, k, p in zip(spatial, ksize, pads):
        span = s + 2 * p - k
        if span < 0 or span % stride:
            raise ShapeError(
                f"extent {s} with kernel {k}, padding {p}, stride {stride} "
                "does not give an integral output size"
            )
        out.append(span // stride + 1)
    return tuple(out)


def _check(x: np.ndarray, dims: int, c_in: int):
    if x.ndim != dims + 2:
        raise ShapeError(f"expected a (B, C) + {dims} spatial axes input, got shape {x.shape}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {c_in}")


def _float_dtype(*arrays) -> np.dtype:
    dt = np.result_type(*arrays)
    return dt if dt in (np.float32, np.float64) else np.dtype(np.float64)


def _tap_slices(tap, out_sp, stride):
    return tuple(slice(t, t + stride * (o - 1) + 1, stride) for t, o in zip(tap, out_sp))


def _tap_major(kernel):
    # (taps, C_out, C_in) contiguous so every per-tap product goes through BLAS
    Co, Ci = kernel.shape[:2]
    return np.ascontiguousarray(kernel.reshape(Co, Ci, -1).transpose(2, 0, 1))


def _direct_setup(x, kernel, cfg):
    cfg = cfg or ConvConfig(dims=kernel.ndim - 2)
    dims = kernel.ndim - 2
    _check(x, dims, kernel.shape[1])
    ksize = kernel.shape[2:]
    pads = cfg.pads(ksize)
    out_sp = output_shape(x.shape[2:], ksize, pads, cfg.stride)
    return cfg, ksize, pads, out_sp


def conv_direct(x: np.ndarray, kernel: np.ndarray, cfg: ConvConfig | None = None) -> np.ndarray:
    """Dense cross-correlation of ``x`` (B, C_in, ...) with ``kernel`` (C_out, C_in, k, ...).

    Evaluated tap by tap as ``(C_out, C_in) @ (C_in, positions)`` products, so
    every output element accumulates its taps in the same row-major order.
    """
    cfg, ksize, pads, out_sp = _direct_setup(x, kernel, cfg)
    dt = _float_dtype(x, kernel)
    x = np.asarray(x, dtype=dt)
    kernel = np.asarray(kernel, dtype=dt)
    B, Ci = x.shape[:2]
    Co = kernel.shape[0]
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pads])
    out = np.zeros((B, Co, math.prod(out_sp)), dtype=dt)
    taps = _tap_major(kernel)
    lead = (slice(None), slice(None))
    for t, tap in enumerate(np.ndindex(*ksize)):
        patch = xp[lead + _tap_slices(tap, out_sp, cfg.stride)].reshape(B, Ci, -1)
        out += np.matmul(taps[t], patch)
    return out.reshape((B, Co) + out_sp)


def conv_direct_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray,
                         cfg: ConvConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients ``(grad_input, grad_kernel)`` of :func:`conv_direct`."""
    cfg, ksize, pads, out_sp = _direct_setup(x, kernel, cfg)
    dt = _float_dtype(x, kernel, grad_out)
    x = np.asarray(x, dtype=dt)
    kernel = np.asarray(kernel, dtype=dt)
    B, Ci = x.shape[:2]
    Co = kernel.shape[0]
    g = np.asarray(grad_out, dtype=dt).reshape(B, Co, -1)
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pads])
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(kernel)
    taps_t = np.ascontiguousarray(_tap_major(kernel).transpose(0, 2, 1))
    lead = (slice(None), slice(None))
    for t, tap in enumerate(np.ndindex(*ksize)):
        sl = lead + _tap_slices(tap, out_sp, cfg.stride)
        patch = xp[sl].reshape(B, Ci, -1)
        gk[lead + tap] = np.tensordot(g, patch, axes=([0, 2], [0, 2]))
        gxp[sl] += np.matmul(taps_t[t], g).reshape((B, Ci) + out_sp)
    crop = lead + tuple(slice(p, p + s) for p, s in zip(pads, x.shape[2:]))
    return gxp[crop].copy(), gk


# two-stage ring convolution

def _vol(shape2or3):
    return (1,) * (3 - len(shape2or3)) + tuple(shape2or3)


def _ring_setup(x, params, cfg):
    g = params.geometry
    cfg = cfg or ConvConfig(dims=g.dims)
    if cfg.dims != g.dims:
        raise ShapeError(f"config is {cfg.dims}D but the ring layer is {g.dims}D")
    _check(x, g.dims, params.c_in)
    if not cfg.equivariant:
        warnings.warn(
            f"stride {cfg.stride} > 1 breaks rotation/reflection equivariance",
            EquivarianceWarning,
            stacklevel=3,
        )
    pads = cfg.pads(g.spatial)
    out_sp = output_shape(x.shape[2:], g.spatial, pads, cfg.stride)
    return cfg, pads, out_sp


def _stage_args(pads, stride, dims):
    pad3 = (0,) * (3 - dims) + tuple(pads)
    stride3 = (1,) * (3 - dims) + (stride,) * dims
    return pad3, stride3


def gmr_stage1(x: np.ndarray, basis: GaussianRingBasis, cfg: ConvConfig | None = None,
               threads: int | None = None) -> np.ndarray:
    """Correlate every input channel with every ring image.

    Returns ``(B, C_in, n) + out_spatial``: the input reshaped to
    ``(B * C_in, 1, ...)`` and run through a depthwise convolution with the
    ``n`` masked rings.
    """
    g = basis.geometry
    cfg = cfg or ConvConfig(dims=g.dims)
    pads = cfg.pads(g.spatial)
    out_sp = output_shape(x.shape[2:], g.spatial, pads, cfg.stride)
    dt = _float_dtype(x)
    B, Ci = x.shape[:2]
    planes = np.ascontiguousarray(x, dtype=dt).reshape((B * Ci,) + _vol(x.shape[2:]))
    M = np.ascontiguousarray(basis.M, dtype=dt).reshape((g.n,) + _vol(g.spatial))
    S = np.zeros((B * Ci, g.n) + _vol(out_sp), dtype=dt)
    pad3, stride3 = _stage_args(pads, cfg.stride, g.dims)
    _backend.kernels().dw_forward(planes, M, S, pad3, stride3,
                                  threads or _backend.get_num_threads())
    return S.reshape((B, Ci, g.n) + out_sp)


def _mix(S: np.ndarray, weights: np.ndarray) -> np.ndarray:
    B, Ci, n = S.shape[:3]
    out_sp = S.shape[3:]
    W2 = np.asarray(weights, dtype=S.dtype).reshape(weights.shape[0], Ci * n)
    y = np.matmul(W2, S.reshape(B, Ci * n, -1))
    return y.reshape((B, weights.shape[0]) + out_sp)


def gmr_conv(x: np.ndarray, params: GmrLayerParams, cfg: ConvConfig | None = None,
             basis: GaussianRingBasis | None = None, threads: int | None = None) -> np.ndarray:
    """Ring-layer convolution by depthwise ring filtering then 1x1 ring mixing.

    Pass a prebuilt ``basis`` to skip rebuilding it from ``params.sigma``
    (the frozen inference path). The result equals
    ``conv_direct(x, materialize_kernel(params), cfg)`` up to rounding.
    """
    cfg, _, _ = _ring_setup(x, params, cfg)
    S = gmr_stage1(x, basis or params.basis(), cfg, threads)
    return _mix(S, params.weights)


class GmrGrads(NamedTuple):
    grad_input: np.ndarray
    grad_weights: np.ndarray
    grad_log_sigma: np.ndarray


def gmr_conv_backward(x: np.ndarray, params: GmrLayerParams, cfg: ConvConfig | None,
                      grad_out: np.ndarray, stage1: np.ndarray | None = None,
                      threads: int | None = None) -> GmrGrads:
    """Reverse-mode gradients of :func:`gmr_conv`.

    ``stage1`` may carry the ring responses from the forward pass to avoid
    recomputing them.
    """
    cfg, pads, out_sp = _ring_setup(x, params, cfg)
    g = params.geometry
    basis = params.basis()
    threads = threads or _backend.get_num_threads()
    if stage1 is None:
        stage1 = gmr_stage1(x, basis, cfg, threads)
    dt = stage1.dtype
    B, Ci, n = stage1.shape[:3]
    Co = params.c_out
    gy = np.asarray(grad_out, dtype=dt).reshape(B, Co, -1)
    S2 = stage1.reshape(B, Ci * n, -1)

    grad_w = np.tensordot(gy, S2, axes=([0, 2], [0, 2])).reshape(Co, Ci, n)
    W2 = np.asarray(params.weights, dtype=dt).reshape(Co, Ci * n)
    gS = np.matmul(W2.T, gy).reshape((B * Ci, n) + _vol(out_sp))

    pad3, stride3 = _stage_args(pads, cfg.stride, g.dims)
    kern = _backend.kernels()
    M = np.ascontiguousarray(basis.M, dtype=dt).reshape((n,) + _vol(g.spatial))
    planes = np.ascontiguousarray(x, dtype=dt).reshape((B * Ci,) + _vol(x.shape[2:]))
    gx = np.zeros_like(planes)
    kern.dw_input_grad(gS, M, gx, pad3, stride3, threads)

    partial = np.zeros((B * Ci, n) + _vol(g.spatial), dtype=np.float64)
    kern.dw_basis_grad(planes, gS, partial, pad3, stride3, threads)
    grad_M = partial.sum(axis=0).reshape(basis.M.shape)
    J = basis_sigma_jacobian(g, params.sigma)
    grad_ls = (grad_M * J).reshape(n, -1).sum(axis=1)
    return GmrGrads(gx.reshape(x.shape), grad_w.astype(np.float64), grad_ls)


@dataclass(frozen=True)
class OpCount:
    """Multiply-accumulate counts per batch element.

    ``direct`` is ``HW k^d C_in C_out``; ``gmr`` is the complexity figure
    ``HW n (k^d + C_in C_out)``. ``gmr_exact`` counts what the two-stage path
    actually executes, ``HW n C_in (k^d + C_out)``, since the depthwise stage
    runs once per input channel.
    """

    direct: int
    gmr: int
    gmr_exact: int

    @property
    def ratio(self) -> float:
        return self.gmr / self.direct

    @property
    def exact_ratio(self) -> float:
        return self.gmr_exact / self.direct


def op_count(cfg: ConvConfig | None, k: int, n: int, c_in: int, c_out: int,
             spatial: Sequence[int]) -> OpCount:
    cfg = cfg or ConvConfig(dims=len(spatial))
    dims = len(spatial)
    out_sp = output_shape(spatial, (k,) * dims, cfg.pads((k,) * dims), cfg.stride)
    hw = math.prod(out_sp)
    kd = k**dims
    return OpCount(
        direct=hw * kd * c_in * c_out,
        gmr=hw * n * (kd + c_in * c_out),
        gmr_exact=hw * n * c_in * (kd + c_out),
    )
