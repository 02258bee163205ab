"""Geodesic shooting of bandlimited velocities and its discrete adjoint.

Forward: explicit Euler on the EPDiff equation in the truncated Fourier
space, plus semi-Lagrangian integration of the inverse map,
``phi^{-1}_{s+1} = phi^{-1}_s o (id - dt v_s)``.

Backward: the exact adjoint of that discretization. The cotangent of the
final inverse map is pulled back through every semi-Lagrangian step
(each of which injects a velocity cotangent) while the velocity cotangent
is transported from t=1 to t=0 through the transposed linearised EPDiff
step. The result is returned in the Sobolev metric induced by ``L``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, StructuralError
from .fourier import BandlimitedVelocity, FourierOperator, divergence, spectral_grid
from .volume import DisplacementField, TrilinearSampler, voxel_grid


@dataclass(frozen=True, eq=False)
class ShootingConfig:
    operator: FourierOperator
    num_time_steps: int = 10

    def __post_init__(self):
        if int(self.num_time_steps) != self.num_time_steps or self.num_time_steps < 1:
            raise StructuralError(f"num_time_steps must be a positive integer, got {self.num_time_steps}")


@dataclass(frozen=True, eq=False)
class GeodesicTrajectory:
    """Velocities ``v_0 .. v_n`` and the inverse maps ``u_0 .. u_n`` (as displacements)."""

    velocities: tuple
    final_inverse_map: DisplacementField
    inverse_maps: tuple
    dense_velocities: tuple = ()

    @property
    def num_time_steps(self):
        return len(self.velocities) - 1


def _jacobian(c, grid):
    return np.stack([np.stack([grid.derivative(c[d], e) for e in range(3)]) for d in range(3)])


def geodesic_rhs(c, op):
    """``-K[(D v)^T * m + Gamma(m (x) v)]`` with ``m = L v``, on coefficient arrays."""
    grid = op.grid
    m = op.apply_l(c)
    vp = grid.to_padded(c)
    mp = grid.to_padded(m)
    jp = grid.to_padded(_jacobian(c, grid))
    advect = grid.from_padded(np.einsum("de...,d...->e...", jp, mp))
    transport = divergence(grid.from_padded(mp[:, None] * vp[None, :]), grid)
    return -op.apply_k(advect + transport)


def geodesic_rhs_tangent(c, w, op):
    """Directional derivative of :func:`geodesic_rhs` at ``c`` along ``w``."""
    grid = op.grid
    m, lw = op.apply_l(c), op.apply_l(w)
    vp, wp = grid.to_padded(c), grid.to_padded(w)
    mp, lwp = grid.to_padded(m), grid.to_padded(lw)
    jv = grid.to_padded(_jacobian(c, grid))
    jw = grid.to_padded(_jacobian(w, grid))
    advect = grid.from_padded(np.einsum("de...,d...->e...", jw, mp) + np.einsum("de...,d...->e...", jv, lwp))
    outer = lwp[:, None] * vp[None, :] + mp[:, None] * wp[None, :]
    transport = divergence(grid.from_padded(outer), grid)
    return -op.apply_k(advect + transport)


def geodesic_rhs_adjoint(c, z, op):
    """Transpose of :func:`geodesic_rhs_tangent` at ``c`` applied to ``z``.

    Transposes are taken in the real coefficient inner product
    ``Re sum conj(a) b``, in which band products are self-adjoint, ``K`` and
    ``L`` are symmetric and each derivative symbol is skew.
    """
    grid = op.grid
    y = op.apply_k(z)
    m = op.apply_l(c)
    vp, mp, yp = grid.to_padded(c), grid.to_padded(m), grid.to_padded(y)
    jv = grid.to_padded(_jacobian(c, grid))
    dy = grid.to_padded(_jacobian(y, grid))
    # dy[d, e] samples the derivative of y_d along e
    from_advect_w = divergence(grid.from_padded(mp[:, None] * yp[None, :]), grid)
    through_l = grid.from_padded(
        np.einsum("e...,de...->d...", yp, jv) - np.einsum("de...,e...->d...", dy, vp)
    )
    from_transport_w = grid.from_padded(np.einsum("ca...,c...->a...", dy, mp))
    return from_advect_w - op.apply_l(through_l) + from_transport_w


def _check_band(v, op):
    if v.full_dims != op.full_dims or v.trunc_dims != op.trunc_dims:
        raise StructuralError(
            f"velocity band {v.full_dims}/{v.trunc_dims} does not match operator "
            f"{op.full_dims}/{op.trunc_dims}"
        )


def _integrate_maps(coeff_seq, grid, dt):
    dims = grid.full_dims
    x = voxel_grid(dims)
    u = np.zeros((3,) + dims)
    maps = [u]
    dense = []
    for s, c in enumerate(coeff_seq):
        vd = grid.lift(c)
        dense.append(vd)
        sampler = TrilinearSampler(dims, x - dt * vd)
        u = -dt * vd + sampler.sample(u)
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"inverse map became non-finite at step {s + 1}", step=s + 1)
        maps.append(u)
    return maps, dense


def integrate_inverse_map(velocities, full_dims=None, dt=None):
    """Compose ``phi^{-1}`` from a sequence of bandlimited velocities, one Euler step each.

    ``dt`` defaults to ``1 / len(velocities)`` so the sequence spans unit time.
    """
    velocities = list(velocities)
    if not velocities:
        raise StructuralError("need at least one velocity")
    first = velocities[0]
    if full_dims is not None and tuple(full_dims) != first.full_dims:
        raise StructuralError(f"velocity grid {first.full_dims} differs from requested {tuple(full_dims)}")
    for v in velocities[1:]:
        first._check_band(v)
    dt = 1.0 / len(velocities) if dt is None else float(dt)
    maps, _ = _integrate_maps([v.coeffs for v in velocities], first.grid, dt)
    return DisplacementField(maps[-1])


def shoot_forward(v0, cfg):
    """Integrate the geodesic from ``v0`` over unit time; see :class:`GeodesicTrajectory`."""
    op = cfg.operator
    _check_band(v0, op)
    n = cfg.num_time_steps
    dt = 1.0 / n
    coeffs = [v0.coeffs]
    for s in range(n):
        nxt = coeffs[-1] + dt * geodesic_rhs(coeffs[-1], op)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"velocity became non-finite at step {s + 1}", step=s + 1)
        coeffs.append(nxt)
    maps, dense = _integrate_maps(coeffs[:-1], op.grid, dt)
    velocities = tuple(v0.with_coeffs(c) for c in coeffs)
    return GeodesicTrajectory(velocities, DisplacementField(maps[-1]), tuple(maps), tuple(dense))


def backward_adjoint(trajectory, map_cotangent, cfg):
    """Pull the cotangent of the final inverse map back to a gradient at ``v0``.

    ``map_cotangent`` is ``dE / d(phi^{-1}_1 - id)`` on the dense grid, shape
    ``(3, *full_dims)``. Returns the gradient w.r.t. ``v0`` in the metric
    :meth:`~diffeoraptor.fourier.FourierOperator` ``inner``, i.e. the
    ``K``-smoothed gradient.
    """
    op = cfg.operator
    grid = op.grid
    n = trajectory.num_time_steps
    if n != cfg.num_time_steps or len(trajectory.inverse_maps) != n + 1:
        raise StructuralError(f"trajectory has {n} steps, config expects {cfg.num_time_steps}")
    _check_band(trajectory.velocities[0], op)
    ubar = np.array(map_cotangent, dtype=np.float64)
    if ubar.shape != (3,) + grid.full_dims:
        raise StructuralError(f"map cotangent has shape {ubar.shape}, expected {(3,) + grid.full_dims}")
    dt = 1.0 / n
    x = voxel_grid(grid.full_dims)
    # z is N times the coefficient cotangent, so that projecting a dense
    # cotangent is just the forward DFT restricted to the band
    z = np.zeros((3,) + grid.band_shape, dtype=np.complex128)
    for s in reversed(range(n)):
        c = trajectory.velocities[s].coeffs
        vd = trajectory.dense_velocities[s] if trajectory.dense_velocities else grid.lift(c)
        sampler = TrilinearSampler(grid.full_dims, x - dt * vd)
        u_s = trajectory.inverse_maps[s]
        vbar = -dt * ubar
        if s > 0:
            jac = sampler.gradient(u_s)
            vbar -= dt * np.einsum("c...,cd...->d...", ubar, jac)
            ubar = sampler.scatter(ubar)
        z = z + dt * geodesic_rhs_adjoint(c, z, op) + grid.project(vbar)
    return BandlimitedVelocity(op.apply_k(z), grid.full_dims, grid.trunc_dims)


def sobolev_inner(a, b, op):
    """``<a, b>_V = (1/N) Re sum L(k) conj(a_k) b_k`` with ``N`` the voxel count."""
    return float(np.real(np.vdot(op.apply_l(a.coeffs), b.coeffs))) / op.grid.nvox
