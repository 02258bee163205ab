"""Label overlap and Jacobian-determinant analysis of deformations."""

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .volume import DisplacementField, LabelMap, Volume, voxel_grid


def _check_dims(a, b):
    if tuple(a.dims) != tuple(b.dims):
        raise StructuralError(f"dimension mismatch: {tuple(a.dims)} vs {tuple(b.dims)}")


def dice(a, b, label=1):
    """``2|A & B| / (|A| + |B|)`` for the voxels carrying ``label``; 1 when both are empty."""
    _check_dims(a, b)
    ma = a.data == label
    mb = b.data == label
    total = int(np.count_nonzero(ma)) + int(np.count_nonzero(mb))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(ma & mb)) / total


def warp_labels(m, d):
    """Nearest-neighbour resampling ``out(x) = m(round(x + d(x)))``, clamped to the grid."""
    _check_dims(m, d)
    coords = np.rint(voxel_grid(m.dims) + d.data).astype(np.intp)
    for a, n in enumerate(m.dims):
        np.clip(coords[a], 0, n - 1, out=coords[a])
    return LabelMap(m.data[coords[0], coords[1], coords[2]], m.spacing, m.origin)


def jacobian_determinant(d):
    """Per-voxel ``det(I + grad d)`` with central differences (one-sided at borders)."""
    if min(d.dims) < 2:
        raise StructuralError(f"jacobian needs at least 2 voxels per axis, got {tuple(d.dims)}")
    j = [list(np.gradient(d.data[a])) for a in range(3)]
    for a in range(3):
        j[a][a] += 1.0
    det = (j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
           - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
           + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]))
    return Volume(det, d.spacing, d.origin)


@dataclass(frozen=True, eq=False)
class JacobianHistogram:
    """Counts of ``log10 det J`` in bins ``[edges[i], edges[i+1])``; bin centres are multiples of the width."""

    edges: np.ndarray
    counts: np.ndarray
    non_positive: int
    bin_width: float

    @property
    def total(self):
        return int(self.counts.sum()) + self.non_positive

    @property
    def centres(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def fraction_within(self, limit):
        """Share of all voxels whose bin centre satisfies ``|centre| <= limit``."""
        if self.total == 0:
            return 0.0
        inside = np.abs(self.centres) <= limit + 1e-12 * self.bin_width
        return float(self.counts[inside].sum()) / self.total

    def rows(self):
        """``(lower_edge, upper_edge, count)`` per bin."""
        return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def jacobian_histogram(d, bin_width=0.05):
    """Histogram of ``log10 det J`` with a bin centred on 0; non-positive determinants are counted apart."""
    if not bin_width > 0:
        raise StructuralError(f"bin_width must be positive, got {bin_width}")
    det = jacobian_determinant(d).data.ravel()
    positive = det > 0
    logs = np.log10(det[positive])
    idx = np.floor(logs / bin_width + 0.5).astype(np.int64)
    lo, hi = (int(idx.min()), int(idx.max())) if idx.size else (0, 0)
    counts = np.bincount(idx - lo, minlength=hi - lo + 1)
    edges = (np.arange(lo, hi + 2) - 0.5) * bin_width
    return JacobianHistogram(edges, counts, int(np.count_nonzero(~positive)), float(bin_width))


__all__ = ["JacobianHistogram", "dice", "jacobian_determinant", "jacobian_histogram", "warp_labels"]
