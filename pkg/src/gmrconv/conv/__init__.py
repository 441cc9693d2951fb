"""Convolution engines: dense reference path and the two-stage ring path.

The depthwise ring stage runs on a compiled extension when it is importable
and falls back to numpy otherwise. ``GMRCONV_BACKEND=python`` forces the
fallback; :func:`use_backend` switches at runtime (used by the benchmarks).
"""

from ._backend import available_backends, get_backend, get_num_threads, set_num_threads, use_backend
from .engine import (
    ConvConfig,
    EquivarianceWarning,
    GmrGrads,
    OpCount,
    ShapeError,
    conv_direct,
    conv_direct_backward,
    gmr_conv,
    gmr_conv_backward,
    gmr_stage1,
    op_count,
    output_shape,
)

__all__ = [
    "ConvConfig",
    "EquivarianceWarning",
    "GmrGrads",
    "OpCount",
    "ShapeError",
    "available_backends",
    "conv_direct",
    "conv_direct_backward",
    "get_backend",
    "get_num_threads",
    "gmr_conv",
    "gmr_conv_backward",
    "gmr_stage1",
    "op_count",
    "output_shape",
    "set_num_threads",
    "use_backend",
]
