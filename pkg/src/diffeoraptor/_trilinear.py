"""Compiled trilinear kernels behind :class:`~diffeoraptor.volume.TrilinearSampler`.

All kernels take arrays of shape ``(C, ni, nj, nk)`` and points of shape
``(3, M)`` in voxel coordinates, clamped to ``[0, n - 1]`` per axis.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _cell(q, n):
    qc = min(max(q, 0.0), n - 1.0)
    i0 = min(int(np.floor(qc)), max(n - 2, 0))
    i1 = i0 + 1 if n > 1 else i0
    return i0, i1, qc - i0


@njit(cache=True)
def sample(arr, pts):
    nc, ni, nj, nk = arr.shape
    m = pts.shape[1]
    out = np.empty((nc, m))
    for p in range(m):
        i0, i1, fi = _cell(pts[0, p], ni)
        j0, j1, fj = _cell(pts[1, p], nj)
        k0, k1, fk = _cell(pts[2, p], nk)
        gi, gj, gk = 1.0 - fi, 1.0 - fj, 1.0 - fk
        for c in range(nc):
            a = arr[c]
            out[c, p] = (
                gi * (gj * (gk * a[i0, j0, k0] + fk * a[i0, j0, k1]) + fj * (gk * a[i0, j1, k0] + fk * a[i0, j1, k1]))
                + fi * (gj * (gk * a[i1, j0, k0] + fk * a[i1, j0, k1]) + fj * (gk * a[i1, j1, k0] + fk * a[i1, j1, k1]))
            )
    return out


@njit(cache=True, inline="always")
def _bilinear(a, ax, i, j, k, fb, fc, step_b, step_c):
    # interpolates over the two axes other than ax, at index i/j/k along ax
    if ax == 0:
        return ((1 - fb) * ((1 - fc) * a[i, j, k] + fc * a[i, j, k + step_c])
                + fb * ((1 - fc) * a[i, j + step_b, k] + fc * a[i, j + step_b, k + step_c]))
    if ax == 1:
        return ((1 - fb) * ((1 - fc) * a[i, j, k] + fc * a[i, j, k + step_c])
                + fb * ((1 - fc) * a[i + step_b, j, k] + fc * a[i + step_b, j, k + step_c]))
    return ((1 - fb) * ((1 - fc) * a[i, j, k] + fc * a[i, j + step_c, k])
            + fb * ((1 - fc) * a[i + step_b, j, k] + fc * a[i + step_b, j + step_c, k]))


@njit(cache=True)
def gradient(arr, pts):
    """Derivative of the interpolant; mean of one-sided slopes on nodes, zero outside."""
    nc, ni, nj, nk = arr.shape
    m = pts.shape[1]
    out = np.zeros((nc, 3, m))
    for p in range(m):
        i0, i1, fi = _cell(pts[0, p], ni)
        j0, j1, fj = _cell(pts[1, p], nj)
        k0, k1, fk = _cell(pts[2, p], nk)
        si, sj, sk = i1 - i0, j1 - j0, k1 - k0
        for ax in range(3):
            if ax == 0:
                q, n, f, lo, st = pts[0, p], ni, fi, i0, si
                fb, fc, sb, sc = fj, fk, sj, sk
            elif ax == 1:
                q, n, f, lo, st = pts[1, p], nj, fj, j0, sj
                fb, fc, sb, sc = fi, fk, si, sk
            else:
                q, n, f, lo, st = pts[2, p], nk, fk, k0, sk
                fb, fc, sb, sc = fi, fj, si, sj
            if q < 0.0 or q > n - 1.0:
                continue
            for c in range(nc):
                a = arr[c]
                if ax == 0:
                    centre = _bilinear(a, 0, i0, j0, k0, fb, fc, sb, sc)
                    right = _bilinear(a, 0, i0 + st, j0, k0, fb, fc, sb, sc) - centre
                    left = centre - _bilinear(a, 0, i0 - 1, j0, k0, fb, fc, sb, sc) if lo > 0 else 0.0
                elif ax == 1:
                    centre = _bilinear(a, 1, i0, j0, k0, fb, fc, sb, sc)
                    right = _bilinear(a, 1, i0, j0 + st, k0, fb, fc, sb, sc) - centre
                    left = centre - _bilinear(a, 1, i0, j0 - 1, k0, fb, fc, sb, sc) if lo > 0 else 0.0
                else:
                    centre = _bilinear(a, 2, i0, j0, k0, fb, fc, sb, sc)
                    right = _bilinear(a, 2, i0, j0, k0 + st, fb, fc, sb, sc) - centre
                    left = centre - _bilinear(a, 2, i0, j0, k0 - 1, fb, fc, sb, sc) if lo > 0 else 0.0
                if f == 0.0:
                    out[c, ax, p] = 0.5 * (left + right)
                elif f == 1.0:
                    out[c, ax, p] = 0.5 * right
                else:
                    out[c, ax, p] = right
    return out


@njit(cache=True)
def scatter(vals, pts, ni, nj, nk):
    """Transpose of :func:`sample`."""
    nc, m = vals.shape
    out = np.zeros((nc, ni, nj, nk))
    for p in range(m):
        i0, i1, fi = _cell(pts[0, p], ni)
        j0, j1, fj = _cell(pts[1, p], nj)
        k0, k1, fk = _cell(pts[2, p], nk)
        gi, gj, gk = 1.0 - fi, 1.0 - fj, 1.0 - fk
        for c in range(nc):
            v = vals[c, p]
            o = out[c]
            o[i0, j0, k0] += gi * gj * gk * v
            o[i0, j0, k1] += gi * gj * fk * v
            o[i0, j1, k0] += gi * fj * gk * v
            o[i0, j1, k1] += gi * fj * fk * v
            o[i1, j0, k0] += fi * gj * gk * v
            o[i1, j0, k1] += fi * gj * fk * v
            o[i1, j1, k0] += fi * fj * gk * v
            o[i1, j1, k1] += fi * fj * fk * v
    return out
