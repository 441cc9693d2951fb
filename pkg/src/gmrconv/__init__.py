"""Rotation- and reflection-equivariant convolution with Gaussian mixture ring kernels."""

from .conv import (
    ConvConfig,
    conv_direct,
    conv_direct_backward,
    get_backend,
    gmr_conv,
    gmr_conv_backward,
    op_count,
)
from .kernel import (
    GmrLayerParams,
    build_basis,
    build_nearest_ring_basis,
    init_layer,
    materialize_kernel,
    parameter_count,
    ring_geometry,
)

__version__ = "0.1.0"

__all__ = [
    "ConvConfig",
    "GmrLayerParams",
    "build_basis",
    "build_nearest_ring_basis",
    "conv_direct",
    "conv_direct_backward",
    "get_backend",
    "gmr_conv",
    "gmr_conv_backward",
    "init_layer",
    "materialize_kernel",
    "op_count",
    "parameter_count",
    "ring_geometry",
]
