"""Deterministic synthetic volumes with matching label maps."""

import numpy as np

from .errors import StructuralError
from .volume import LabelMap, Volume, voxel_grid

KINDS = ("sphere", "checker", "ramp")


def _dims(dims):
    if isinstance(dims, (int, np.integer)):
        dims = (dims,) * 3
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < 8:
        raise StructuralError(f"phantom dims must be 3 values >= 8, got {dims}")
    return dims


def _texture(dims, amplitude, period):
    """Sum of three oblique cosines, zero when ``amplitude`` is 0."""
    if amplitude == 0:
        return 0.0
    x = voxel_grid(dims)
    w = 2.0 * np.pi / period
    return amplitude * (
        np.cos(w * (x[0] + 0.5 * x[1]))
        + np.cos(w * (x[1] + 0.5 * x[2]) + 1.0)
        + np.cos(w * (x[2] + 0.5 * x[0]) + 2.0)
    ) / 3.0


def make_phantom(kind, dims, radius=None, period=None, edge_width=1.0, texture=0.0,
                 texture_period=16.0, noise=0.0, seed=0):
    """Synthetic ``(Volume, LabelMap)``.

    ``sphere``: intensity 1 inside a sphere of ``radius`` (default a quarter
    of the smallest dim) centred in the volume, with a logistic edge of
    ``edge_width`` voxels (0 gives a hard edge); label 1 inside.
    ``checker``: alternating cubes of side ``period / 2`` (default period
    = dims); label 1 on odd cells, intensity equal to the label.
    ``ramp``: intensity rising linearly from 0 to 1 along the first axis;
    label 1 on the upper half.
    ``texture`` adds smooth cosines of that amplitude; ``noise`` adds
    Gaussian noise with that standard deviation drawn from ``seed``.
    """
    dims = _dims(dims)
    if texture < 0 or noise < 0 or edge_width < 0:
        raise StructuralError("texture, noise and edge_width must be non-negative")
    x = voxel_grid(dims)
    if kind == "sphere":
        radius = min(dims) / 4.0 if radius is None else float(radius)
        if radius < 0:
            raise StructuralError(f"radius must be non-negative, got {radius}")
        centre = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
        dist = np.sqrt(sum((x[a] - centre[a]) ** 2 for a in range(3)))
        labels = (dist <= radius).astype(np.int64)
        if edge_width > 0 and radius > 0:
            image = 1.0 / (1.0 + np.exp(np.clip((dist - radius) / edge_width, -50.0, 50.0)))
        else:
            image = labels.astype(np.float64)
    elif kind == "checker":
        period = np.asarray(dims if period is None else np.broadcast_to(period, 3), dtype=np.float64)
        if np.any(period < 2):
            raise StructuralError(f"checker period must be >= 2, got {period}")
        cells = sum(np.floor(2.0 * x[a] / period[a]).astype(np.int64) for a in range(3))
        labels = cells % 2
        image = labels.astype(np.float64)
    elif kind == "ramp":
        image = x[0] / (dims[0] - 1)
        labels = (x[0] >= dims[0] / 2.0).astype(np.int64)
    else:
        raise StructuralError(f"unknown phantom kind {kind!r}; expected one of {KINDS}")
    image = image + _texture(dims, float(texture), float(texture_period))
    if noise > 0:
        image = image + np.random.default_rng(seed).normal(0.0, noise, size=dims)
    return Volume(image), LabelMap(labels)


__all__ = ["KINDS", "make_phantom"]
