"""Dense 3D grids: scalar volumes, displacement fields and label maps.

Arrays are indexed ``data[i, j, k]`` where ``i`` runs along the first
NIfTI axis (x), ``j`` along y and ``k`` along z. Displacements are stored
in voxel units with shape ``(3, ni, nj, nk)``; component 0 displaces
along ``i``. Physical spacing only matters at I/O and evaluation time.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _trilinear
from .errors import StructuralError

Triple = tuple


def _as_triple(values, name, positive=False):
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise StructuralError(f"{name} must have 3 components, got {len(out)}")
    if positive and min(out) <= 0:
        raise StructuralError(f"{name} components must be strictly positive: {out}")
    return out


@dataclass(frozen=True)
class Volume:
    """Scalar image on a regular grid."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise StructuralError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise StructuralError("volume data contains NaN or Inf")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @property
    def dims(self):
        return self.data.shape

    def with_data(self, data):
        return Volume(data, self.spacing, self.origin)


@dataclass(frozen=True)
class DisplacementField:
    """Dense vector field ``phi^{-1}(x) - x`` in voxel units."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] != 3:
            raise StructuralError(f"displacement data must have shape (3, ni, nj, nk), got {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @property
    def dims(self):
        return self.data.shape[1:]

    @classmethod
    def identity(cls, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        return cls(np.zeros((3,) + tuple(dims)), spacing, origin)


@dataclass(frozen=True)
class LabelMap:
    """Integer segmentation; label 0 is background."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise StructuralError(f"label data must be 3D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            rounded = np.rint(data)
            if not np.allclose(rounded, data):
                raise StructuralError("label data must be integer valued")
            data = rounded
        data = data.astype(np.int64)
        if data.size and data.min() < 0:
            raise StructuralError("labels must be non-negative")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @property
    def dims(self):
        return self.data.shape


def voxel_grid(dims):
    """Voxel-index coordinates of shape ``(3, *dims)``."""
    return np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij"))


class TrilinearSampler:
    """Trilinear sampling of arrays of one shape at a fixed set of points.

    Coordinates outside ``[0, n-1]`` are clamped to the edge. The sampler
    also provides the spatial derivative of the interpolant and the
    transpose (scatter) of the sampling operator, both needed by the
    discrete adjoint. At points sitting exactly on a grid node the
    derivative is the mean of the one-sided cell slopes, i.e. what a
    symmetric finite difference of the interpolant sees. Arrays may carry
    leading channel axes, e.g. ``(3, *shape)`` for a vector field.
    """

    def __init__(self, shape, coords):
        self.shape = tuple(int(n) for n in shape)
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[0] != 3:
            raise StructuralError(f"coordinates must have shape (3, ...), got {coords.shape}")
        self.out_shape = coords.shape[1:]
        self.size = int(np.prod(self.shape))
        self._points = np.ascontiguousarray(coords.reshape(3, -1))

    def _channels(self, arr):
        arr = np.asarray(arr, dtype=np.float64)
        lead = arr.shape[: arr.ndim - 3]
        if arr.shape[arr.ndim - 3 :] != self.shape:
            raise StructuralError(f"array shape {arr.shape} does not end in {self.shape}")
        return np.ascontiguousarray(arr.reshape((-1,) + self.shape)), lead

    def sample(self, arr):
        """Interpolate ``arr`` (shape ``(..., *shape)``) at the sampler's points."""
        flat, lead = self._channels(arr)
        return _trilinear.sample(flat, self._points).reshape(lead + self.out_shape)

    def gradient(self, arr):
        """Derivative of the interpolant w.r.t. the sample coordinates, shape ``(..., 3, *out)``."""
        flat, lead = self._channels(arr)
        return _trilinear.gradient(flat, self._points).reshape(lead + (3,) + self.out_shape)

    def scatter(self, values):
        """Transpose of :meth:`sample`: accumulate ``values`` (shape ``(..., *out)``) onto the grid."""
        vals = np.asarray(values, dtype=np.float64)
        lead = vals.shape[: vals.ndim - len(self.out_shape)]
        vals = np.ascontiguousarray(vals.reshape((-1, self._points.shape[1])))
        return _trilinear.scatter(vals, self._points, *self.shape).reshape(lead + self.shape)


def interpolate(v, p):
    """Trilinear value of ``v`` at voxel coordinate ``p`` (clamped to the grid)."""
    p = np.asarray(p, dtype=np.float64).reshape(3, 1)
    return float(TrilinearSampler(v.dims, p).sample(v.data)[0])


def _check_same_dims(a, b):
    if tuple(a.dims) != tuple(b.dims):
        raise StructuralError(f"dimension mismatch: {tuple(a.dims)} vs {tuple(b.dims)}")


def warp(v, d):
    """Resample ``v`` through ``d``: ``out(x) = v(x + d(x))``."""
    _check_same_dims(v, d)
    if not np.any(d.data):
        return v.with_data(v.data.copy())
    sampler = TrilinearSampler(v.dims, voxel_grid(v.dims) + d.data)
    return v.with_data(sampler.sample(v.data))


def spatial_gradient(v):
    """Central differences inside, one-sided at the borders, in voxel units."""
    if min(v.dims) < 2:
        raise StructuralError(f"spatial gradient needs at least 2 voxels per axis, got {v.dims}")
    return tuple(v.with_data(g) for g in np.gradient(v.data))


def smooth(data, sigma):
    return ndimage.gaussian_filter(data, sigma=sigma, mode="nearest", truncate=3.0)


def downsample(v, factor):
    """Gaussian anti-aliasing (stddev ``0.5 * factor`` voxels) then subsampling."""
    factor = int(factor)
    if factor < 1:
        raise StructuralError(f"downsample factor must be >= 1, got {factor}")
    if factor > min(v.dims):
        raise StructuralError(f"downsample factor {factor} exceeds volume dims {v.dims}")
    data = smooth(v.data, 0.5 * factor)[::factor, ::factor, ::factor]
    spacing = tuple(s * factor for s in v.spacing)
    return Volume(data, spacing, v.origin)


def upsample_displacement(d, target_dims):
    """Trilinear upsampling of a displacement, rescaled to target-grid voxel units."""
    target_dims = tuple(int(n) for n in target_dims)
    if any(t < s for t, s in zip(target_dims, d.dims)):
        raise StructuralError(f"target dims {target_dims} smaller than source dims {tuple(d.dims)}")
    ratio = np.array([t / s for t, s in zip(target_dims, d.dims)])
    coords = voxel_grid(target_dims) / ratio.reshape(3, 1, 1, 1)
    sampler = TrilinearSampler(d.dims, coords)
    data = ratio.reshape(3, 1, 1, 1) * sampler.sample(d.data)
    spacing = tuple(s / r for s, r in zip(d.spacing, ratio))
    return DisplacementField(data, spacing, d.origin)
