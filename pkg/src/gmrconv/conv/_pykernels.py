"""Pure-numpy fallback for the compiled depthwise kernels.

Same signatures and accumulation order as the compiled module: taps are
visited in row-major order and each contributes one vectorized update over
all planes at once. ``num_threads`` is accepted and ignored.
"""

import numpy as np


def _ranges(off, s, size, out):
    lo = 0 if off >= 0 else (-off + s - 1) // s
    hi = 0 if size - off <= 0 else min((size - off - 1) // s + 1, out)
    return lo, hi


def _tap_slices(a, u, v, pad, stride, in_shape, out_shape):
    """Output and input slices touched by one kernel tap, or None if empty."""
    out_sl, in_sl = [], []
    for off, s, size, o in zip((a - pad[0], u - pad[1], v - pad[2]), stride, in_shape, out_shape):
        lo, hi = _ranges(off, s, size, o)
        if hi <= lo:
            return None
        out_sl.append(slice(lo, hi))
        in_sl.append(slice(lo * s + off, (hi - 1) * s + off + 1, s))
    return tuple(out_sl), tuple(in_sl)


def dw_forward(x, basis, out, pad, stride, num_threads=1):
    n, kd, kh, kw = basis.shape
    for i in range(n):
        for a in range(kd):
            for u in range(kh):
                for v in range(kw):
                    m = basis[i, a, u, v]
                    if m == 0:
                        continue
                    sl = _tap_slices(a, u, v, pad, stride, x.shape[1:], out.shape[2:])
                    if sl is None:
                        continue
                    o, s = sl
                    out[(slice(None), i) + o] += m * x[(slice(None),) + s]


def dw_input_grad(gout, basis, gx, pad, stride, num_threads=1):
    n, kd, kh, kw = basis.shape
    for i in range(n):
        for a in range(kd):
            for u in range(kh):
                for v in range(kw):
                    m = basis[i, a, u, v]
                    if m == 0:
                        continue
                    sl = _tap_slices(a, u, v, pad, stride, gx.shape[1:], gout.shape[2:])
                    if sl is None:
                        continue
                    o, s = sl
                    gx[(slice(None),) + s] += m * gout[(slice(None), i) + o]


def dw_basis_grad(x, gout, partial, pad, stride, num_threads=1):
    N, n, kd, kh, kw = partial.shape
    x64 = x.astype(np.float64, copy=False)
    for i in range(n):
        for a in range(kd):
            for u in range(kh):
                for v in range(kw):
                    sl = _tap_slices(a, u, v, pad, stride, x.shape[1:], gout.shape[2:])
                    if sl is None:
                        partial[:, i, a, u, v] = 0.0
                        continue
                    o, s = sl
                    g = gout[(slice(None), i) + o].astype(np.float64, copy=False)
                    xs = x64[(slice(None),) + s]
                    partial[:, i, a, u, v] = np.einsum(
                        "pj,pj->p", g.reshape(len(g), -1), xs.reshape(len(xs), -1)
                    )
