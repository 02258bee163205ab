"""Patch-based correlation ratio (RaPTOR) and its intensity derivative.

Within each patch the fixed-image intensities ``x`` are binned on a uniform
grid of ``num_bins`` centres spanning the fixed-image range; every sample
contributes linearly to its two nearest bin centres. The dissimilarity of
a patch is

    1 - eta = (sum y^2 - sum_j N_j mu_j^2) / (N sigma^2)

and the volume metric is its mean over accepted patches. The residual
``sum y^2 - sum_j N_j mu_j^2`` is invariant to shifting ``y``, so it is
evaluated on centred intensities.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefinedError, StructuralError

_EMPTY_BIN = 1e-12


@dataclass(frozen=True)
class RaptorConfig:
    num_bins: int = 32
    patch_size: int = 9
    patch_stride: int = 6
    # fraction of the squared moving-image intensity range
    min_variance: float = 1e-6
    # 0: population variance (values in [0, 1]); 1: unbiased variance
    variance_ddof: int = 0

    def __post_init__(self):
        if self.num_bins < 2:
            raise StructuralError(f"num_bins must be >= 2, got {self.num_bins}")
        if self.patch_size < 2:
            raise StructuralError(f"patch_size must be >= 2, got {self.patch_size}")
        if self.patch_stride < 1:
            raise StructuralError(f"patch_stride must be >= 1, got {self.patch_stride}")
        if self.min_variance < 0:
            raise StructuralError(f"min_variance must be non-negative, got {self.min_variance}")
        if self.variance_ddof not in (0, 1):
            raise StructuralError(f"variance_ddof must be 0 or 1, got {self.variance_ddof}")


@dataclass(frozen=True, eq=False)
class PatchHistogramState:
    """Parzen histogram of one patch.

    ``lower_bin[i]`` is the lower of the two bins sample ``i`` feeds and
    ``weights[i]`` holds its contributions to ``lower_bin[i]`` and
    ``lower_bin[i] + 1``.
    """

    bin_mass: np.ndarray
    bin_mean: np.ndarray
    lower_bin: np.ndarray
    weights: np.ndarray
    variance: float
    mean: float

    def bin_weight_matrix(self):
        """Dense ``(N, num_bins)`` matrix of lambda_ij."""
        n = len(self.lower_bin)
        lam = np.zeros((n, len(self.bin_mass)))
        rows = np.arange(n)
        lam[rows, self.lower_bin] += self.weights[:, 0]
        lam[rows, self.lower_bin + 1] += self.weights[:, 1]
        return lam


def bin_assignment(x, x_range, num_bins):
    """Lower bin index and upper-bin weight for each intensity in ``x``."""
    lo, hi = float(x_range[0]), float(x_range[1])
    width = (hi - lo) / (num_bins - 1)
    t = np.clip((np.asarray(x, dtype=np.float64) - lo) / width, 0.0, num_bins - 1)
    lower = np.minimum(np.floor(t).astype(np.intp), num_bins - 2)
    return lower, t - lower


def _degenerate(x_range):
    return not float(x_range[1]) > float(x_range[0])


def patch_cr(x_patch, y_patch, cfg, x_range=None, variance_floor=0.0):
    """``1 - eta(Y|X)`` of one patch, or ``None`` when the patch is rejected.

    Returns ``(value, PatchHistogramState)``. Bins span ``x_range``
    (default: the patch's own range). Patches whose ``y`` variance is
    below ``variance_floor`` (or zero), or whose bin range is degenerate,
    are rejected.
    """
    x = np.asarray(x_patch, dtype=np.float64).ravel()
    y = np.asarray(y_patch, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise StructuralError(f"patch sample counts differ: {x.size} vs {y.size}")
    n = y.size
    if n < 2:
        raise StructuralError("a patch needs at least 2 samples")
    if x_range is None:
        x_range = (x.min(), x.max())
    if _degenerate(x_range):
        return None
    mean = y.mean()
    yc = y - mean
    sum_sq = float(yc @ yc)
    variance = sum_sq / (n - cfg.variance_ddof)
    if variance <= 0.0 or variance < variance_floor:
        return None
    lower, upper_w = bin_assignment(x, x_range, cfg.num_bins)
    nb = cfg.num_bins
    mass = np.bincount(lower, 1.0 - upper_w, nb) + np.bincount(lower + 1, upper_w, nb)
    sums = np.bincount(lower, (1.0 - upper_w) * yc, nb) + np.bincount(lower + 1, upper_w * yc, nb)
    filled = mass > _EMPTY_BIN
    centred_means = np.where(filled, sums / np.where(filled, mass, 1.0), 0.0)
    residual = sum_sq - float(np.sum(mass * centred_means**2))
    value = residual / (n * variance)
    state = PatchHistogramState(
        bin_mass=mass,
        bin_mean=np.where(filled, centred_means + mean, 0.0),
        lower_bin=lower,
        weights=np.stack([1.0 - upper_w, upper_w], axis=1),
        variance=variance,
        mean=mean,
    )
    return value, state


def patch_cr_gradient(y_patch, value, state, ddof=0):
    """Derivative of ``1 - eta`` w.r.t. each ``y_i`` of an accepted patch.

    With ``R = sum y^2 - sum N_j mu_j^2`` the derivative is
    ``2/(N s2) * (y_i - sum_j lambda_ij mu_j - (y_i - mu) R / ((N - ddof) s2))``.
    """
    y = np.asarray(y_patch, dtype=np.float64).ravel()
    n = y.size
    s2 = state.variance
    residual = value * n * s2
    fitted = state.weights[:, 0] * state.bin_mean[state.lower_bin] + state.weights[:, 1] * state.bin_mean[state.lower_bin + 1]
    return 2.0 / (n * s2) * (y - fitted - (y - state.mean) * residual / ((n - ddof) * s2))


def patch_origins(n, size, stride):
    """Patch start indices along one axis; the last patch is flush with the end."""
    size = min(size, n)
    starts = list(range(0, n - size + 1, stride))
    if starts[-1] != n - size:
        starts.append(n - size)
    return np.asarray(starts, dtype=np.intp)


def patch_index(dims, cfg):
    """Flat voxel indices of every patch, shape ``(num_patches, samples_per_patch)``."""
    dims = tuple(dims)
    sizes = [min(cfg.patch_size, n) for n in dims]
    starts = [patch_origins(n, cfg.patch_size, cfg.patch_stride) for n in dims]
    strides = (dims[1] * dims[2], dims[2], 1)
    origin_flat = sum(np.ix_(*starts)[a] * strides[a] for a in range(3)).ravel()
    offset_flat = sum(np.ix_(*[np.arange(s) for s in sizes])[a] * strides[a] for a in range(3)).ravel()
    return origin_flat[:, None] + offset_flat[None, :]


def intensity_range(data):
    return float(np.min(data)), float(np.max(data))


def _as_array(v):
    return np.asarray(getattr(v, "data", v), dtype=np.float64)


def raptor_value_and_gradient(x, y, cfg, x_range=None, y_range=None, with_gradient=True):
    """Vectorised RaPTOR over all patches.

    ``x_range`` places the bins (default: range of ``x``); ``y_range`` sets
    the variance floor ``min_variance * (y_max - y_min)^2`` (default: range
    of ``y``). Returns ``(value, gradient or None, num_accepted)``.
    """
    xa, ya = _as_array(x), _as_array(y)
    if xa.shape != ya.shape:
        raise StructuralError(f"dimension mismatch: {xa.shape} vs {ya.shape}")
    x_range = intensity_range(xa) if x_range is None else x_range
    y_range = intensity_range(ya) if y_range is None else y_range
    if _degenerate(x_range):
        raise MetricUndefinedError("fixed image has a constant intensity; no bins can be placed")
    floor = cfg.min_variance * (float(y_range[1]) - float(y_range[0])) ** 2
    nb = cfg.num_bins
    idx = patch_index(xa.shape, cfg)
    num_patches, n = idx.shape
    lower_all, upper_all = bin_assignment(xa.ravel(), x_range, nb)
    lower = lower_all[idx]
    upper_w = upper_all[idx]
    lower_w = 1.0 - upper_w
    ys = ya.ravel()[idx]
    mean = ys.mean(axis=1, keepdims=True)
    yc = ys - mean
    sum_sq = np.einsum("pi,pi->p", yc, yc)
    variance = sum_sq / (n - cfg.variance_ddof)
    accepted = (variance > 0.0) & (variance >= floor)
    num_accepted = int(np.count_nonzero(accepted))
    if num_accepted == 0:
        raise MetricUndefinedError("every patch was rejected by the variance guard")

    bin_id = lower + (np.arange(num_patches) * nb)[:, None]
    size = num_patches * nb
    mass = np.bincount(bin_id.ravel(), lower_w.ravel(), size) + np.bincount((bin_id + 1).ravel(), upper_w.ravel(), size)
    sums = np.bincount(bin_id.ravel(), (lower_w * yc).ravel(), size) + np.bincount(
        (bin_id + 1).ravel(), (upper_w * yc).ravel(), size
    )
    filled = mass > _EMPTY_BIN
    means = np.where(filled, sums / np.where(filled, mass, 1.0), 0.0)
    explained = (mass * means**2).reshape(num_patches, nb).sum(axis=1)
    residual = sum_sq - explained
    safe_var = np.where(accepted, variance, 1.0)
    values = residual / (n * safe_var)
    value = float(np.sum(values[accepted])) / num_accepted
    if not with_gradient:
        return value, None, num_accepted

    fitted = lower_w * means[bin_id] + upper_w * means[bin_id + 1]
    scale = 2.0 / (n * safe_var)[:, None]
    dpatch = scale * (yc - fitted - yc * (residual / ((n - cfg.variance_ddof) * safe_var))[:, None])
    dpatch[~accepted] = 0.0
    grad = np.bincount(idx.ravel(), dpatch.ravel(), ya.size).reshape(ya.shape) / num_accepted
    return value, grad, num_accepted


def raptor_total(x, y, cfg, x_range=None, y_range=None):
    """Mean ``1 - eta`` over accepted patches (the RaPTOR dissimilarity)."""
    return raptor_value_and_gradient(x, y, cfg, x_range, y_range, with_gradient=False)[0]


def raptor_gradient(x, y_warped, cfg, x_range=None, y_range=None):
    """Per-voxel derivative of :func:`raptor_total` w.r.t. the moving intensities.

    A tiling in which every patch is rejected yields a zero gradient.
    """
    ya = _as_array(y_warped)
    try:
        grad = raptor_value_and_gradient(x, y_warped, cfg, x_range, y_range)[1]
    except MetricUndefinedError:
        grad = np.zeros_like(ya)
    if hasattr(y_warped, "with_data"):
        return y_warped.with_data(grad)
    return grad
