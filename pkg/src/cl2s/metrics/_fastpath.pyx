# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused single-pass color kernels (same contracts as _reference).

The NumPy versions materialize ~20 temporaries per image; these loops fuse
everything, which is what makes per-pixel CIEDE2000 over whole datasets
cheap. Inputs are flattened (N, 3) float64 arrays.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cbrt, cos, exp, fabs, pow, sin, sqrt

cnp.import_array()

cdef double DEG = 180.0 / 3.14159265358979323846
cdef double RAD = 3.14159265358979323846 / 180.0
cdef double DELTA = 6.0 / 29.0
cdef double DELTA3 = DELTA * DELTA * DELTA
cdef double POW25_7 = 6103515625.0  # 25**7

cdef double WX = 0.95047
cdef double WY = 1.0
cdef double WZ = 1.08883


cdef inline double _linearize(double c) nogil:
    if c <= 0.04045:
        return c / 12.92
    return pow((c + 0.055) / 1.055, 2.4)


cdef inline double _lab_f(double t) nogil:
    if t > DELTA3:
        return cbrt(t)
    return t / (3.0 * DELTA * DELTA) + 4.0 / 29.0


cdef inline double _pow7(double x) nogil:
    cdef double x2 = x * x
    cdef double x4 = x2 * x2
    return x4 * x2 * x


def srgb_to_lab(double[:, ::1] rgb):
    """(N, 3) sRGB in [0, 1] -> (N, 3) CIELAB (D65, 2 degrees)."""
    cdef Py_ssize_t n = rgb.shape[0]
    out_arr = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    cdef double r, g, b, fx, fy, fz
    with nogil:
        for i in range(n):
            r = _linearize(rgb[i, 0])
            g = _linearize(rgb[i, 1])
            b = _linearize(rgb[i, 2])
            fx = _lab_f((0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / WX)
            fy = _lab_f((0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / WY)
            fz = _lab_f((0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / WZ)
            out[i, 0] = 116.0 * fy - 16.0
            out[i, 1] = 500.0 * (fx - fy)
            out[i, 2] = 200.0 * (fy - fz)
    return out_arr


def ciede2000(double[:, ::1] lab1, double[:, ::1] lab2):
    """Pairwise CIEDE2000 over (N, 3) Lab arrays -> (N,) differences."""
    if lab1.shape[0] != lab2.shape[0]:
        raise ValueError("ciede2000: length mismatch")
    cdef Py_ssize_t n = lab1.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double l1, a1, b1, l2, a2, b2
    cdef double c1, c2, cbar, cbar7, g, a1p, a2p, c1p, c2p, h1p, h2p
    cdef double dl, dc, dh, dbig_h, lbar, cpbar, hsum, hdiff, hbar
    cdef double t, lm50, sl, sc, sh, cpbar7, rc, dtheta, rt, tl, tc, th
    with nogil:
        for i in range(n):
            l1 = lab1[i, 0]; a1 = lab1[i, 1]; b1 = lab1[i, 2]
            l2 = lab2[i, 0]; a2 = lab2[i, 1]; b2 = lab2[i, 2]

            c1 = sqrt(a1 * a1 + b1 * b1)
            c2 = sqrt(a2 * a2 + b2 * b2)
            cbar = 0.5 * (c1 + c2)
            cbar7 = _pow7(cbar)
            g = 0.5 * (1.0 - sqrt(cbar7 / (cbar7 + POW25_7)))

            a1p = (1.0 + g) * a1
            a2p = (1.0 + g) * a2
            c1p = sqrt(a1p * a1p + b1 * b1)
            c2p = sqrt(a2p * a2p + b2 * b2)

            h1p = atan2(b1, a1p) * DEG
            if h1p < 0.0:
                h1p += 360.0
            h2p = atan2(b2, a2p) * DEG
            if h2p < 0.0:
                h2p += 360.0

            dl = l2 - l1
            dc = c2p - c1p

            if c1p * c2p == 0.0:
                dh = 0.0
            else:
                dh = h2p - h1p
                if dh > 180.0:
                    dh -= 360.0
                elif dh < -180.0:
                    dh += 360.0
            dbig_h = 2.0 * sqrt(c1p * c2p) * sin(0.5 * dh * RAD)

            lbar = 0.5 * (l1 + l2)
            cpbar = 0.5 * (c1p + c2p)

            hsum = h1p + h2p
            if c1p * c2p == 0.0:
                hbar = hsum
            else:
                hdiff = fabs(h1p - h2p)
                if hdiff <= 180.0:
                    hbar = 0.5 * hsum
                elif hsum < 360.0:
                    hbar = 0.5 * (hsum + 360.0)
                else:
                    hbar = 0.5 * (hsum - 360.0)

            t = (1.0
                 - 0.17 * cos((hbar - 30.0) * RAD)
                 + 0.24 * cos(2.0 * hbar * RAD)
                 + 0.32 * cos((3.0 * hbar + 6.0) * RAD)
                 - 0.20 * cos((4.0 * hbar - 63.0) * RAD))

            lm50 = (lbar - 50.0) * (lbar - 50.0)
            sl = 1.0 + 0.015 * lm50 / sqrt(20.0 + lm50)
            sc = 1.0 + 0.045 * cpbar
            sh = 1.0 + 0.015 * cpbar * t

            cpbar7 = _pow7(cpbar)
            rc = 2.0 * sqrt(cpbar7 / (cpbar7 + POW25_7))
            dtheta = 30.0 * exp(-((hbar - 275.0) / 25.0) * ((hbar - 275.0) / 25.0))
            rt = -sin(2.0 * dtheta * RAD) * rc

            tl = dl / sl
            tc = dc / sc
            th = dbig_h / sh
            out[i] = sqrt(tl * tl + tc * tc + th * th + rt * tc * th)
    return out_arr
