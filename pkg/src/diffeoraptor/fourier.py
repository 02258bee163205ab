"""Bandlimited velocity fields and their Fourier-domain operators.

A velocity field is stored as the low-frequency block of the unscaled
forward DFT of each of its three components (the inverse transform carries
the ``1/N`` factor). Retained signed frequencies satisfy
``|k_d| <= trunc_dims[d] // 2`` and ``|k_d| < full_dims[d] / 2``; the
Nyquist plane is never retained so that every coefficient has a distinct
conjugate partner. Compact arrays use FFT ordering ``0, 1, .., h, -h, .., -1``
along each axis.

Products of bandlimited fields are evaluated on a zero-padded grid twice
the band size, which is alias-free for the retained band, and re-truncated.
Spatial derivatives use the central-difference symbol ``i sin(2 pi k / N)``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from .errors import NumericalError, StructuralError

_AXES = (-3, -2, -1)
SYMMETRY_TOL = 1e-10


def band_half_widths(trunc_dims, full_dims):
    return tuple(min(int(t) // 2, (int(n) - 1) // 2) for t, n in zip(trunc_dims, full_dims))


def signed_frequencies(h):
    return np.concatenate([np.arange(h + 1), np.arange(-h, 0)])


def laplacian_symbol(k, full_dims):
    """Symbol of the negative 7-point discrete Laplacian at frequency ``k``."""
    return sum(2.0 * (1.0 - np.cos(2.0 * np.pi * kd / n)) for kd, n in zip(k, full_dims))


def operator_symbol(k, alpha, c, full_dims):
    """Multiplier of ``L = (-alpha * Laplacian + I)^c`` at frequency ``k``."""
    return (alpha * laplacian_symbol(k, full_dims) + 1.0) ** c


class SpectralGrid:
    """Index bookkeeping and transforms for one (full_dims, trunc_dims) pair."""

    def __init__(self, full_dims, trunc_dims):
        full_dims = tuple(int(n) for n in full_dims)
        trunc_dims = tuple(int(t) for t in trunc_dims)
        if len(full_dims) != 3 or len(trunc_dims) != 3:
            raise StructuralError("full_dims and trunc_dims must have 3 entries")
        if min(trunc_dims) < 1 or any(t > n for t, n in zip(trunc_dims, full_dims)):
            raise StructuralError(f"trunc_dims {trunc_dims} must be positive and <= full_dims {full_dims}")
        self.full_dims = full_dims
        self.trunc_dims = trunc_dims
        self.half_widths = band_half_widths(trunc_dims, full_dims)
        self.band_shape = tuple(2 * h + 1 for h in self.half_widths)
        self.padded_shape = tuple(2 * n for n in self.band_shape)
        self.nvox = int(np.prod(full_dims))
        self._pvox = int(np.prod(self.padded_shape))
        freqs = [signed_frequencies(h) for h in self.half_widths]
        self.frequencies = freqs
        self._full_index = np.ix_(*[f % n for f, n in zip(freqs, full_dims)])
        self._pad_index = np.ix_(*[f % p for f, p in zip(freqs, self.padded_shape)])
        self._neg_index = np.ix_(*[(-np.arange(n)) % n for n in self.band_shape])
        # real transforms keep only k_z >= 0; the rest follows by conjugate symmetry
        h_z = self.half_widths[2]
        self._half_full = self._full_index[:2] + (np.arange(h_z + 1).reshape(1, 1, -1),)
        self._half_pad = self._pad_index[:2] + (np.arange(h_z + 1).reshape(1, 1, -1),)
        neg_xy = [(-np.arange(n)) % n for n in self.band_shape[:2]]
        self._mirror = np.ix_(neg_xy[0], neg_xy[1], np.arange(h_z, 0, -1))
        sins, laplacian = [], 0.0
        for axis, (f, n) in enumerate(zip(freqs, full_dims)):
            shape = [1, 1, 1]
            shape[axis] = -1
            theta = 2.0 * np.pi * f / n
            sins.append(np.sin(theta).reshape(shape))
            laplacian = laplacian + (2.0 * (1.0 - np.cos(theta))).reshape(shape)
        self.sin_symbols = tuple(sins)
        self.laplacian = np.broadcast_to(laplacian, self.band_shape).copy()

    def __repr__(self):
        return f"SpectralGrid(full_dims={self.full_dims}, trunc_dims={self.trunc_dims})"

    def conjugate_partner(self, c):
        """``conj(c(-k))`` for each retained ``k``."""
        return np.conj(c[(Ellipsis,) + self._neg_index])

    def hermitian_part(self, c):
        return 0.5 * (c + self.conjugate_partner(c))

    def symmetry_error(self, c):
        if c.size == 0:
            return 0.0
        return float(np.max(np.abs(c - self.conjugate_partner(c))))

    def _complete(self, half):
        """Full band from its ``k_z >= 0`` part, assuming a real field."""
        return np.concatenate([half, np.conj(half[(Ellipsis,) + self._mirror])], axis=-1)

    def _half_buffer(self, c, shape, index):
        h_z = self.half_widths[2]
        buf = np.zeros(c.shape[:-3] + shape[:2] + (shape[2] // 2 + 1,), dtype=np.complex128)
        buf[(Ellipsis,) + index] = c[..., : h_z + 1]
        return buf

    def project(self, field):
        spec = fft.rfftn(field, axes=_AXES)
        return self.hermitian_part(self._complete(spec[(Ellipsis,) + self._half_full]))

    def lift(self, c):
        buf = self._half_buffer(c, self.full_dims, self._half_full)
        return fft.irfftn(buf, s=self.full_dims, axes=_AXES)

    def to_padded(self, c):
        """Sample the bandlimited field on the padded grid."""
        buf = self._half_buffer(c, self.padded_shape, self._half_pad)
        return fft.irfftn(buf, s=self.padded_shape, axes=_AXES) * (self._pvox / self.nvox)

    def from_padded(self, f):
        spec = fft.rfftn(f, axes=_AXES)[(Ellipsis,) + self._half_pad]
        return self._complete(spec) * (self.nvox / self._pvox)

    def derivative(self, c, axis):
        return 1j * self.sin_symbols[axis] * c

    def inner(self, a, b):
        """Real coefficient inner product ``Re sum conj(a) b``."""
        return float(np.real(np.vdot(a, b)))


@lru_cache(maxsize=32)
def spectral_grid(full_dims, trunc_dims):
    return SpectralGrid(tuple(full_dims), tuple(trunc_dims))


@dataclass(frozen=True, eq=False)
class BandlimitedVelocity:
    """Truncated Fourier coefficients of a real 3-vector field."""

    coeffs: np.ndarray
    full_dims: tuple
    trunc_dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "full_dims", tuple(int(n) for n in self.full_dims))
        object.__setattr__(self, "trunc_dims", tuple(int(n) for n in self.trunc_dims))
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        expected = (3,) + self.grid.band_shape
        if coeffs.shape != expected:
            raise StructuralError(f"coefficient array has shape {coeffs.shape}, expected {expected}")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def grid(self):
        return spectral_grid(self.full_dims, self.trunc_dims)

    @classmethod
    def zeros(cls, full_dims, trunc_dims):
        grid = spectral_grid(tuple(full_dims), tuple(trunc_dims))
        return cls(np.zeros((3,) + grid.band_shape, dtype=np.complex128), full_dims, trunc_dims)

    def with_coeffs(self, coeffs):
        return BandlimitedVelocity(coeffs, self.full_dims, self.trunc_dims)

    def _check_band(self, other):
        if self.full_dims != other.full_dims or self.trunc_dims != other.trunc_dims:
            raise StructuralError("bandlimited velocities live on different bands")

    def __add__(self, other):
        self._check_band(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_band(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def __mul__(self, scalar):
        return self.with_coeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def norm(self):
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True, eq=False)
class FourierOperator:
    """Multiplier tables of ``L = (-alpha Laplacian + I)^c`` and its inverse ``K``."""

    grid: SpectralGrid
    alpha: float
    c: int
    l_multiplier: np.ndarray
    k_multiplier: np.ndarray

    @property
    def full_dims(self):
        return self.grid.full_dims

    @property
    def trunc_dims(self):
        return self.grid.trunc_dims

    def apply_l(self, coeffs):
        return self.l_multiplier * coeffs

    def apply_k(self, coeffs):
        return self.k_multiplier * coeffs


def build_operator(alpha, c, trunc_dims, full_dims):
    if alpha <= 0:
        raise StructuralError(f"alpha must be positive, got {alpha}")
    if int(c) != c or c < 1:
        raise StructuralError(f"c must be a positive integer, got {c}")
    grid = spectral_grid(tuple(int(n) for n in full_dims), tuple(int(t) for t in trunc_dims))
    lmult = (alpha * grid.laplacian + 1.0) ** int(c)
    return FourierOperator(grid, float(alpha), int(c), lmult, 1.0 / lmult)


def project(field, trunc_dims):
    """nu: dense real vector field ``(3, *dims)`` -> bandlimited coefficients."""
    data = getattr(field, "data", field)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] != 3:
        raise StructuralError(f"expected a (3, ni, nj, nk) vector field, got shape {data.shape}")
    full_dims = data.shape[1:]
    grid = spectral_grid(full_dims, tuple(int(t) for t in trunc_dims))
    return BandlimitedVelocity(grid.project(data), full_dims, trunc_dims)


def lift(b):
    """iota: bandlimited coefficients -> dense real vector field."""
    grid = b.grid
    err = grid.symmetry_error(b.coeffs)
    scale = max(1.0, float(np.max(np.abs(b.coeffs)))) if b.coeffs.size else 1.0
    if err > SYMMETRY_TOL * scale:
        raise NumericalError(f"coefficients violate Hermitian symmetry by {err:.3e}")
    return grid.lift(b.coeffs)


def fourier_gradient(b):
    """Frequency-domain Jacobian; entry ``[d, e]`` is the derivative of component d along axis e."""
    grid = b.grid
    return np.stack([np.stack([grid.derivative(b.coeffs[d], e) for e in range(3)]) for d in range(3)])


def band_product(a, b, grid):
    """Coefficients of the pointwise product of two bandlimited scalar fields, re-truncated."""
    if a.shape[-3:] != grid.band_shape or b.shape[-3:] != grid.band_shape:
        raise StructuralError("operands do not match the grid band")
    return grid.from_padded(grid.to_padded(a) * grid.to_padded(b))


def truncated_correlation(jac, m, grid):
    """``(D v)^T * m``: component e is ``sum_d (d v_d / d x_e) m_d``."""
    if jac.shape[:2] != (3, 3) or m.shape[0] != 3:
        raise StructuralError("expected a (3, 3, band) Jacobian and a (3, band) momentum")
    if jac.shape[-3:] != grid.band_shape or m.shape[-3:] != grid.band_shape:
        raise StructuralError("operands do not match the grid band")
    jp = grid.to_padded(jac)
    mp = grid.to_padded(m)
    return grid.from_padded(np.einsum("de...,d...->e...", jp, mp))


def divergence(tensor, grid):
    """Row-wise divergence ``sum_e D_e T[d, e]`` of a (3, 3, band) table."""
    return sum(grid.derivative(tensor[:, e], e) for e in range(3))


def truncated_product(m, v, grid):
    """``Gamma(m (x) v)``: divergence of the band-limited tensor product ``m_d v_e``."""
    if m.shape[-3:] != grid.band_shape or v.shape[-3:] != grid.band_shape:
        raise StructuralError("operands do not match the grid band")
    mp = grid.to_padded(m)
    vp = grid.to_padded(v)
    return divergence(grid.from_padded(mp[:, None] * vp[None, :]), grid)
