"""Geometric transforms and pooling on dense ``numpy`` arrays.

Arrays follow a batch x channel x spatial layout (``(B, C, H, W)`` in 2D,
``(B, C, D, H, W)`` in 3D); the spatial plane of the 2D helpers is always the
last two axes. All functions are pure and return new arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "rot90",
    "flip",
    "rotate_bilinear",
    "avg_pool",
    "central_disk_mask",
    "rel_error",
    "cube_symmetries",
    "apply_cube_symmetry",
]

_EPS = 1e-12


class DimensionMismatchError(ValueError):
    """Raised when array extents do not agree with an operation's contract."""


def rot90(t: np.ndarray, quarter_turns: int = 1, plane: tuple[int, int] = (-2, -1)) -> np.ndarray:
    """Rotate by quarter turns (counter-clockwise) in ``plane``, by exact index permutation.

    >>> rot90(np.array([[1, 2], [3, 4]]))
    array([[2, 4],
           [1, 3]])
    """
    t = np.asarray(t)
    if t.shape[plane[0]] != t.shape[plane[1]]:
        raise DimensionMismatchError(
            f"rot90 needs a square plane, got extents {t.shape[plane[0]]} and {t.shape[plane[1]]}"
        )
    return np.ascontiguousarray(np.rot90(t, quarter_turns % 4, axes=plane))


def flip(t: np.ndarray, axis: int = -1) -> np.ndarray:
    """Reverse ``t`` along ``axis``."""
    return np.ascontiguousarray(np.flip(np.asarray(t), axis=axis))


def _exact_cos_sin(angle_degrees: float) -> tuple[float, float]:
    a = float(angle_degrees) % 360.0
    if a % 90.0 == 0.0:
        return {0: (1.0, 0.0), 1: (0.0, 1.0), 2: (-1.0, 0.0), 3: (0.0, -1.0)}[int(a // 90)]
    rad = np.deg2rad(a)
    return float(np.cos(rad)), float(np.sin(rad))


def rotate_bilinear(t: np.ndarray, angle_degrees: float, fill: float = 0.0) -> np.ndarray:
    """Rotate the last two axes counter-clockwise about the plane center.

    The center sits at ``((H - 1) / 2, (W - 1) / 2)``, so multiples of 90
    degrees land on the pixel grid and reproduce :func:`rot90` on square
    planes. Samples falling outside the frame take ``fill``.
    """
    t = np.asarray(t)
    if float(angle_degrees) % 360.0 == 0.0:
        return t.copy()
    H, W = t.shape[-2:]
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    c, s = _exact_cos_sin(angle_degrees)
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64) - cy,
                         np.arange(W, dtype=np.float64) - cx, indexing="ij")
    # source coordinate for every output pixel (inverse rotation)
    sy = c * yy + s * xx + cy
    sx = -s * yy + c * xx + cx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0

    flat = t.reshape(-1, H, W).astype(np.float64, copy=False)
    out = np.zeros_like(flat)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        iy = y0 + dy
        ix = x0 + dx
        inside = (iy >= 0) & (iy < H) & (ix >= 0) & (ix < W)
        vals = np.full(flat.shape, fill, dtype=np.float64)
        vals[:, inside] = flat[:, iy[inside], ix[inside]]
        out += wgt * vals
    return out.reshape(t.shape).astype(np.result_type(t.dtype, np.float32), copy=False)


def avg_pool(t: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping mean pooling over every spatial axis (all axes after the first two)."""
    t = np.asarray(t)
    spatial = t.shape[2:]
    if window < 1 or any(s % window for s in spatial):
        raise DimensionMismatchError(
            f"spatial extents {spatial} are not divisible by pooling window {window}"
        )
    shape = list(t.shape[:2])
    for s in spatial:
        shape += [s // window, window]
    axes = tuple(range(3, 3 + 2 * len(spatial), 2))
    return t.reshape(shape).mean(axis=axes)


def _radius_grid(spatial: tuple[int, ...]) -> np.ndarray:
    axes = [np.arange(s, dtype=np.float64) - (s - 1) / 2.0 for s in spatial]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.sqrt(sum(g * g for g in grids))


def central_disk_mask(t: np.ndarray, radius: float, ndim: int = 2) -> np.ndarray:
    """Zero every position of the last ``ndim`` axes farther than ``radius`` from the center."""
    t = np.asarray(t)
    keep = _radius_grid(t.shape[-ndim:]) <= radius
    return np.where(keep, t, 0).astype(t.dtype, copy=False)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||b||, 1e-12)`` in the Euclidean norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()) / max(np.linalg.norm(b.ravel()), _EPS))


def cube_symmetries() -> list[tuple[tuple[int, int, int], tuple[bool, bool, bool]]]:
    """The 48 signed axis permutations of a cube as ``(perm, flips)`` pairs."""
    from itertools import permutations, product

    return [(perm, flips) for perm in permutations(range(3))
            for flips in product((False, True), repeat=3)]


def apply_cube_symmetry(t: np.ndarray, perm: tuple[int, int, int],
                        flips: tuple[bool, bool, bool]) -> np.ndarray:
    """Permute the last three axes by ``perm`` then reverse the flagged ones."""
    t = np.asarray(t)
    lead = t.ndim - 3
    if len({t.shape[lead + p] for p in perm}) != 1:
        raise DimensionMismatchError(f"cube symmetry needs equal spatial extents, got {t.shape[lead:]}")
    out = np.transpose(t, tuple(range(lead)) + tuple(lead + p for p in perm))
    for ax, f in enumerate(flips):
        if f:
            out = np.flip(out, axis=lead + ax)
    return np.ascontiguousarray(out)
