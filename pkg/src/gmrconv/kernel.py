"""Gaussian mixture ring kernels.

A kernel of odd width ``k`` is split into ``n`` concentric rings centred at
``mu_i = (i - 1) * delta_d`` with ``delta_d = k / (2 (n - 1))``. Each ring is
a radial Gaussian sampled on the pixel grid and cut to the disk ``r <= k/2``;
a layer's dense kernel is the ring images mixed by per channel-pair weights.

Ring widths are stored as ``log(sigma)`` and shared by every channel of a
layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import _radius_grid

__all__ = [
    "FWHM_FACTOR",
    "SIGMA_MIN",
    "GeometryError",
    "RingGeometry",
    "SigmaParams",
    "GaussianRingBasis",
    "GmrLayerParams",
    "ring_geometry",
    "default_rings",
    "init_sigma",
    "clip_sigma",
    "sigma_bounds",
    "build_basis",
    "build_nearest_ring_basis",
    "nearest_ring",
    "materialize_kernel",
    "init_weights",
    "init_layer",
    "basis_sigma_jacobian",
    "parameter_count",
]

FWHM_FACTOR = 2.0 * math.sqrt(2.0 * math.log(2.0))
SIGMA_MIN = 1e-2


class GeometryError(ValueError):
    """Unsupported kernel width / ring count combination."""


@dataclass(frozen=True)
class RingGeometry:
    k: int
    n: int
    dims: int = 2

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise GeometryError(f"dims must be 2 or 3, got {self.dims}")
        if self.k < 3 or self.k % 2 == 0:
            raise GeometryError(f"kernel width must be odd and >= 3, got {self.k}")
        if self.n < 2:
            raise GeometryError(f"ring spacing k/(2(n-1)) is undefined for n={self.n}")
        if self.n > (self.k + 1) // 2:
            raise GeometryError(
                f"n={self.n} rings over-resolve a width-{self.k} kernel (max {(self.k + 1) // 2})"
            )

    @property
    def delta_d(self) -> float:
        return self.k / (2.0 * (self.n - 1))

    @property
    def mu(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.float64) * self.delta_d

    @property
    def mask_radius(self) -> float:
        return self.k / 2.0

    @property
    def spatial(self) -> tuple[int, ...]:
        return (self.k,) * self.dims

    def radius(self) -> np.ndarray:
        """Distance of every kernel tap from the center."""
        return _radius_grid(self.spatial)

    def inside(self) -> np.ndarray:
        return self.radius() <= self.mask_radius


def default_rings(k: int) -> int:
    return (k + 1) // 2


def ring_geometry(k: int, n: int | None = None, dims: int = 2) -> RingGeometry:
    """Validated ring layout; ``n`` defaults to ``(k + 1) / 2``."""
    return RingGeometry(k=k, n=default_rings(k) if n is None else n, dims=dims)


@dataclass(frozen=True)
class SigmaParams:
    log_sigma: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def n(self) -> int:
        return self.log_sigma.shape[0]


def sigma_bounds(g: RingGeometry) -> tuple[float, float]:
    return SIGMA_MIN, 2.0 * g.n


def init_sigma(g: RingGeometry) -> SigmaParams:
    """Every ring starts with a full width at half maximum equal to the ring spacing."""
    sigma = g.delta_d / FWHM_FACTOR
    return SigmaParams(np.full(g.n, math.log(sigma)))


def clip_sigma(s: SigmaParams, g: RingGeometry) -> SigmaParams:
    lo, hi = sigma_bounds(g)
    return SigmaParams(np.clip(s.log_sigma, math.log(lo), math.log(hi)))


@dataclass(frozen=True)
class GaussianRingBasis:
    """Masked ring images, shape ``(n,) + (k,) * dims``."""

    M: np.ndarray
    geometry: RingGeometry


def build_basis(g: RingGeometry, s: SigmaParams) -> GaussianRingBasis:
    r = g.radius()
    inside = r <= g.mask_radius
    mu = g.mu.reshape((-1,) + (1,) * g.dims)
    sigma = s.sigma.reshape(mu.shape)
    M = np.exp(-((r - mu) ** 2) / (2.0 * sigma**2))
    M = np.where(inside, M, 0.0)
    return GaussianRingBasis(M, g)


def nearest_ring(radius: np.ndarray, g: RingGeometry) -> np.ndarray:
    """Index of the closest ring center; ties go to the inner ring (first ``argmin``)."""
    radius = np.asarray(radius, dtype=np.float64)
    mu = g.mu.reshape((-1,) + (1,) * radius.ndim)
    return np.argmin(np.abs(radius[None] - mu), axis=0)


def build_nearest_ring_basis(g: RingGeometry) -> GaussianRingBasis:
    """Hard ring assignment: every tap belongs wholly to its nearest ring center."""
    r = g.radius()
    nearest = nearest_ring(r, g)
    M = (np.arange(g.n).reshape((-1,) + (1,) * g.dims) == nearest[None]).astype(np.float64)
    M[:, ~(r <= g.mask_radius)] = 0.0
    return GaussianRingBasis(M, g)


def basis_sigma_jacobian(g: RingGeometry, s: SigmaParams) -> np.ndarray:
    """Derivative of each ring image with respect to its own ``log(sigma)``.

    For ``M = exp(-(r - mu)^2 / (2 sigma^2))`` this is ``M (r - mu)^2 / sigma^2``.
    """
    M = build_basis(g, s).M
    r = g.radius()
    mu = g.mu.reshape((-1,) + (1,) * g.dims)
    sigma = s.sigma.reshape(mu.shape)
    return M * (r - mu) ** 2 / sigma**2


def init_weights(c_in: int, c_out: int, n: int, seed: int) -> np.ndarray:
    """Kaiming-normal ring weights with fan-in ``c_in * n``, shape ``(c_out, c_in, n)``."""
    rng = np.random.default_rng(seed)
    std = math.sqrt(2.0 / (c_in * n))
    return rng.normal(0.0, std, size=(c_out, c_in, n))


@dataclass(frozen=True)
class GmrLayerParams:
    geometry: RingGeometry
    weights: np.ndarray
    sigma: SigmaParams | None = None

    def __post_init__(self):
        if self.sigma is None:
            object.__setattr__(self, "sigma", init_sigma(self.geometry))
        w = np.asarray(self.weights)
        if w.ndim != 3 or w.shape[2] != self.geometry.n:
            raise GeometryError(f"weights must be (c_out, c_in, {self.geometry.n}), got {w.shape}")
        if self.sigma.n != self.geometry.n:
            raise GeometryError(f"expected {self.geometry.n} sigmas, got {self.sigma.n}")
        if not np.all(np.isfinite(w)):
            raise ValueError("ring weights must be finite")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    def basis(self) -> GaussianRingBasis:
        return build_basis(self.geometry, self.sigma)


def init_layer(c_in: int, c_out: int, k: int, n: int | None = None, dims: int = 2,
               seed: int = 0) -> GmrLayerParams:
    g = ring_geometry(k, n, dims)
    return GmrLayerParams(g, init_weights(c_in, c_out, g.n, seed), init_sigma(g))


def materialize_kernel(p: GmrLayerParams, basis: GaussianRingBasis | None = None) -> np.ndarray:
    """Dense kernel ``K[o, c] = sum_i w[o, c, i] M[i]``, shape ``(c_out, c_in) + (k,) * dims``."""
    M = (basis or p.basis()).M
    n = M.shape[0]
    K = p.weights.reshape(-1, n) @ M.reshape(n, -1)
    return K.reshape(p.weights.shape[:2] + M.shape[1:])


def parameter_count(c_in: int, c_out: int, g: RingGeometry) -> tuple[int, int]:
    """Trainable parameters of a ring layer and of a dense layer of the same width."""
    return c_in * c_out * g.n + g.n, c_in * c_out * g.k**g.dims
