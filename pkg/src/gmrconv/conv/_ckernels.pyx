# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled depthwise ring-convolution kernels.

Every routine works on a volumetric layout; 2D callers pass a unit depth axis.
Planes are distributed over OpenMP workers. Each output element is written by
exactly one worker, and the tap loop order is fixed, so results do not depend
on the worker count.
"""

import numpy as np

from cython.parallel cimport prange, threadid

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t s) nogil:
    # smallest o >= 0 with o*s + off >= 0
    if off >= 0:
        return 0
    return (-off + s - 1) // s


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t s, Py_ssize_t size, Py_ssize_t out) nogil:
    # one past the largest o < out with o*s + off < size
    cdef Py_ssize_t h
    if size - off <= 0:
        return 0
    h = (size - off - 1) // s + 1
    return h if h < out else out


def dw_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] basis,
               real[:, :, :, :, ::1] out, tuple pad, tuple stride,
               int num_threads=1):
    """Correlate every plane of ``x`` with every basis image, accumulating into ``out``."""
    cdef Py_ssize_t N = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n = basis.shape[0], kd = basis.shape[1], kh = basis.shape[2], kw = basis.shape[3]
    cdef Py_ssize_t Do = out.shape[2], Ho = out.shape[3], Wo = out.shape[4]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t p, i, a, u, v, od, oy, ox, iz, iy
    cdef Py_ssize_t od0, od1, oy0, oy1, ox0, ox1
    cdef real m
    cdef real* orow
    cdef real* xrow

    for p in prange(N, nogil=True, schedule="static", num_threads=num_threads):
        for i in range(n):
            for a in range(kd):
                od0 = _lo(a - pd, sd)
                od1 = _hi(a - pd, sd, D, Do)
                for u in range(kh):
                    oy0 = _lo(u - ph, sh)
                    oy1 = _hi(u - ph, sh, H, Ho)
                    for v in range(kw):
                        m = basis[i, a, u, v]
                        if m == 0:
                            continue
                        ox0 = _lo(v - pw, sw)
                        ox1 = _hi(v - pw, sw, W, Wo)
                        for od in range(od0, od1):
                            iz = od * sd + a - pd
                            for oy in range(oy0, oy1):
                                iy = oy * sh + u - ph
                                orow = &out[p, i, od, oy, 0]
                                xrow = &x[p, iz, iy, 0]
                                if sw == 1:
                                    for ox in range(ox0, ox1):
                                        orow[ox] = orow[ox] + m * xrow[ox + v - pw]
                                else:
                                    for ox in range(ox0, ox1):
                                        orow[ox] = orow[ox] + m * xrow[ox * sw + v - pw]


def dw_input_grad(real[:, :, :, :, ::1] gout, real[:, :, :, ::1] basis,
                  real[:, :, :, ::1] gx, tuple pad, tuple stride,
                  int num_threads=1):
    """Transpose of :func:`dw_forward` with respect to its input, accumulating into ``gx``."""
    cdef Py_ssize_t N = gx.shape[0], D = gx.shape[1], H = gx.shape[2], W = gx.shape[3]
    cdef Py_ssize_t n = basis.shape[0], kd = basis.shape[1], kh = basis.shape[2], kw = basis.shape[3]
    cdef Py_ssize_t Do = gout.shape[2], Ho = gout.shape[3], Wo = gout.shape[4]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t p, i, a, u, v, od, oy, ox, iz, iy
    cdef Py_ssize_t od0, od1, oy0, oy1, ox0, ox1
    cdef real m
    cdef real* grow
    cdef real* xrow

    for p in prange(N, nogil=True, schedule="static", num_threads=num_threads):
        for i in range(n):
            for a in range(kd):
                od0 = _lo(a - pd, sd)
                od1 = _hi(a - pd, sd, D, Do)
                for u in range(kh):
                    oy0 = _lo(u - ph, sh)
                    oy1 = _hi(u - ph, sh, H, Ho)
                    for v in range(kw):
                        m = basis[i, a, u, v]
                        if m == 0:
                            continue
                        ox0 = _lo(v - pw, sw)
                        ox1 = _hi(v - pw, sw, W, Wo)
                        for od in range(od0, od1):
                            iz = od * sd + a - pd
                            for oy in range(oy0, oy1):
                                iy = oy * sh + u - ph
                                grow = &gout[p, i, od, oy, 0]
                                xrow = &gx[p, iz, iy, 0]
                                if sw == 1:
                                    for ox in range(ox0, ox1):
                                        xrow[ox + v - pw] = xrow[ox + v - pw] + m * grow[ox]
                                else:
                                    for ox in range(ox0, ox1):
                                        xrow[ox * sw + v - pw] = xrow[ox * sw + v - pw] + m * grow[ox]


def dw_basis_grad(real[:, :, :, ::1] x, real[:, :, :, :, ::1] gout,
                  double[:, :, :, :, ::1] partial, tuple pad, tuple stride,
                  int num_threads=1):
    """Per-plane gradient with respect to the basis images.

    ``partial`` has shape ``(N, n, kd, kh, kw)``; the caller reduces it over
    planes in a fixed order so the total is independent of the worker count.
    Products are gathered lane-wise in a row buffer, then summed left to right.
    """
    cdef Py_ssize_t N = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n = partial.shape[1], kd = partial.shape[2], kh = partial.shape[3], kw = partial.shape[4]
    cdef Py_ssize_t Do = gout.shape[2], Ho = gout.shape[3], Wo = gout.shape[4]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t p, i, a, u, v, od, oy, ox, iz, iy, tid
    cdef Py_ssize_t od0, od1, oy0, oy1, ox0, ox1
    cdef double acc
    cdef real* grow
    cdef real* xrow
    cdef real* buf
    cdef double[:, ::1] bufs = np.zeros((max(num_threads, 1), Wo), dtype=np.float64)
    cdef double* dbuf

    for p in prange(N, nogil=True, schedule="static", num_threads=num_threads):
        tid = threadid()
        dbuf = &bufs[tid, 0]
        for i in range(n):
            for a in range(kd):
                od0 = _lo(a - pd, sd)
                od1 = _hi(a - pd, sd, D, Do)
                for u in range(kh):
                    oy0 = _lo(u - ph, sh)
                    oy1 = _hi(u - ph, sh, H, Ho)
                    for v in range(kw):
                        ox0 = _lo(v - pw, sw)
                        ox1 = _hi(v - pw, sw, W, Wo)
                        for ox in range(Wo):
                            dbuf[ox] = 0.0
                        for od in range(od0, od1):
                            iz = od * sd + a - pd
                            for oy in range(oy0, oy1):
                                iy = oy * sh + u - ph
                                grow = &gout[p, i, od, oy, 0]
                                xrow = &x[p, iz, iy, 0]
                                if sw == 1:
                                    for ox in range(ox0, ox1):
                                        dbuf[ox] = dbuf[ox] + <double>grow[ox] * <double>xrow[ox + v - pw]
                                else:
                                    for ox in range(ox0, ox1):
                                        dbuf[ox] = dbuf[ox] + <double>grow[ox] * <double>xrow[ox * sw + v - pw]
                        acc = 0.0
                        for ox in range(Wo):
                            acc = acc + dbuf[ox]
                        partial[p, i, a, u, v] = acc
