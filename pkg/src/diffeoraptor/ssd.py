"""Sum-of-squared-differences data term."""

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError


@dataclass(frozen=True)
class SsdConfig:
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise StructuralError(f"sigma must be positive, got {self.sigma}")


def _arrays(x, y):
    xa = np.asarray(getattr(x, "data", x), dtype=np.float64)
    ya = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if xa.shape != ya.shape:
        raise StructuralError(f"dimension mismatch: {xa.shape} vs {ya.shape}")
    return xa, ya


def ssd_value(x, y_warped, cfg):
    """``1/(2 sigma^2) * sum (y_warped - x)^2`` over all voxels (no per-voxel normalisation)."""
    xa, ya = _arrays(x, y_warped)
    diff = ya - xa
    return float(np.sum(diff * diff)) / (2.0 * cfg.sigma**2)


def ssd_gradient(x, y_warped, cfg):
    """``(y_warped - x) / sigma^2`` per voxel, as a Volume when given Volumes."""
    xa, ya = _arrays(x, y_warped)
    grad = (ya - xa) / cfg.sigma**2
    if hasattr(y_warped, "with_data"):
        return y_warped.with_data(grad)
    return grad
