"""Energy, gradient and momentum gradient descent over a resolution pyramid.

The energy of an initial velocity ``v0`` is

    E(v0) = data(Y o phi^{-1}_1, X) + w * sum_k L(k) |v0(k)|^2

where ``data`` is RaPTOR or SSD and ``phi^{-1}_1`` comes from geodesic
shooting. Gradients are expressed in the Sobolev metric
``<a, b>_V = (1/N) Re sum L(k) conj(a_k) b_k`` (``N`` = voxel count), in
which the data gradient at the identity is exactly ``nu(-K(dPsi/dY . grad Y))``
and the regulariser gradient is ``2 w N v0``.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DivergenceError, StepSizeError, StructuralError
from .evaluation import jacobian_determinant
from .fourier import BandlimitedVelocity, build_operator, spectral_grid
from .geodesic import ShootingConfig, backward_adjoint, shoot_forward, sobolev_inner
from .raptor import RaptorConfig, intensity_range, raptor_value_and_gradient
from .ssd import SsdConfig, ssd_gradient, ssd_value
from .volume import DisplacementField, TrilinearSampler, Volume, downsample, spatial_gradient, voxel_grid, warp

log = logging.getLogger(__name__)

METRICS = ("raptor", "ssd")

# how a pyramid level ended; a stall means backtracking found no decrease
CONVERGED, STALLED, EXHAUSTED = "converged", "stalled", "max_iterations"


def _int_tuple(values, name):
    if isinstance(values, (int, np.integer)):
        values = (values,)
    out = tuple(int(v) for v in values)
    if any(v != float(w) for v, w in zip(out, values)):
        raise StructuralError(f"{name} must contain integers, got {values}")
    return out


@dataclass(frozen=True)
class RegistrationConfig:
    alpha: float = 3.0
    c: int = 3
    sigma: float = 1.0
    metric: str = "raptor"
    raptor: RaptorConfig = field(default_factory=RaptorConfig)
    trunc_dims: tuple = (16, 16, 16)
    num_time_steps: int = 10
    pyramid_levels: tuple = (4, 2, 1)
    max_iterations: tuple = (100, 100, 50)
    step_size: float = 0.05
    momentum: float = 0.9
    tolerance: float = 1e-5
    regularizer_weight: float = 1.0
    # step_size is in voxels of the first update of each level when set
    normalize_step: bool = True
    max_backtracks: int = 10

    def __post_init__(self):
        levels = _int_tuple(self.pyramid_levels, "pyramid_levels")
        iters = _int_tuple(self.max_iterations, "max_iterations")
        if len(iters) == 1 and len(levels) > 1:
            iters = iters * len(levels)
        trunc = _int_tuple(self.trunc_dims, "trunc_dims")
        if len(trunc) == 1:
            trunc = trunc * 3
        object.__setattr__(self, "pyramid_levels", levels)
        object.__setattr__(self, "max_iterations", iters)
        object.__setattr__(self, "trunc_dims", trunc)
        if not levels or levels[-1] != 1 or any(a <= b for a, b in zip(levels, levels[1:])):
            raise StructuralError(f"pyramid_levels must decrease strictly to 1, got {levels}")
        if len(iters) != len(levels) or min(iters) < 0:
            raise StructuralError(f"need one non-negative max_iterations per level, got {iters}")
        if len(trunc) != 3 or min(trunc) < 1:
            raise StructuralError(f"trunc_dims must be 3 positive integers, got {trunc}")
        if self.metric not in METRICS:
            raise StructuralError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not self.step_size > 0:
            raise StructuralError(f"step_size must be positive, got {self.step_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise StructuralError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.regularizer_weight > 0:
            raise StructuralError(f"regularizer_weight must be positive, got {self.regularizer_weight}")
        if self.tolerance < 0 or self.max_backtracks < 0:
            raise StructuralError("tolerance and max_backtracks must be non-negative")
        if self.alpha <= 0 or int(self.c) != self.c or self.c < 1:
            raise StructuralError("alpha must be positive and c a positive integer")
        SsdConfig(self.sigma)
        if int(self.num_time_steps) != self.num_time_steps or self.num_time_steps < 1:
            raise StructuralError(f"num_time_steps must be a positive integer, got {self.num_time_steps}")

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)


class EnergyRecord(NamedTuple):
    level: int
    iteration: int
    data: float
    regularizer: float
    total: float


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    v0: BandlimitedVelocity
    inverse_map: DisplacementField
    warped: Volume
    energy_trace: tuple
    converged: bool

    @property
    def iterations(self):
        return sum(1 for r in self.energy_trace if r.iteration > 0)


@dataclass(eq=False)
class _State:
    v0: BandlimitedVelocity
    total: float
    data: float
    reg: float
    trajectory: object
    sampler: TrilinearSampler
    data_gradient: np.ndarray


def effective_trunc_dims(trunc_dims, dims):
    return tuple(min(int(t), int(n)) for t, n in zip(trunc_dims, dims))


class RegistrationProblem:
    """One fixed/moving pair at one resolution, with its operator and metric ranges."""

    def __init__(self, x, y, cfg):
        if tuple(x.dims) != tuple(y.dims):
            raise StructuralError(f"fixed {tuple(x.dims)} and moving {tuple(y.dims)} dims differ")
        self.x, self.y, self.cfg = x, y, cfg
        self.dims = tuple(x.dims)
        trunc = effective_trunc_dims(cfg.trunc_dims, self.dims)
        self.operator = build_operator(cfg.alpha, cfg.c, trunc, self.dims)
        self.shooting = ShootingConfig(self.operator, cfg.num_time_steps)
        self.grid = self.operator.grid
        self.x_range = intensity_range(x.data)
        self.y_range = intensity_range(y.data)
        self._coords = voxel_grid(self.dims)

    def zero_velocity(self):
        return BandlimitedVelocity.zeros(self.grid.full_dims, self.grid.trunc_dims)

    def regularizer(self, v0):
        return self.cfg.regularizer_weight * float(np.real(np.vdot(self.operator.apply_l(v0.coeffs), v0.coeffs)))

    def data_term(self, warped, with_gradient=True):
        cfg = self.cfg
        if cfg.metric == "ssd":
            ssd = SsdConfig(cfg.sigma)
            value = ssd_value(self.x.data, warped, ssd)
            return value, ssd_gradient(self.x.data, warped, ssd) if with_gradient else None
        value, grad, _ = raptor_value_and_gradient(
            self.x.data, warped, cfg.raptor, self.x_range, self.y_range, with_gradient
        )
        return value, grad

    def evaluate(self, v0, with_gradient=True):
        traj = shoot_forward(v0, self.shooting)
        sampler = TrilinearSampler(self.dims, self._coords + traj.final_inverse_map.data)
        warped = sampler.sample(self.y.data)
        data, dgrad = self.data_term(warped, with_gradient)
        reg = self.regularizer(v0)
        total = data + reg
        if not np.isfinite(total):
            raise DivergenceError("energy is not finite")
        # clamped sampling keeps E finite even when the map folds, so check the map itself
        if not jacobian_determinant(DisplacementField(traj.final_inverse_map.data)).data.min() > 0:
            raise DivergenceError("inverse map is not a diffeomorphism (det J <= 0)")
        return _State(v0, data + reg, data, reg, traj, sampler, dgrad)

    def map_cotangent(self, state):
        """``dE/du`` for the final inverse-map displacement ``u``."""
        if state.data_gradient is None:
            state = self.evaluate(state.v0)
        return state.data_gradient[None] * state.sampler.gradient(self.y.data)

    def gradient(self, state):
        data_grad = backward_adjoint(state.trajectory, self.map_cotangent(state), self.shooting)
        return data_grad + state.v0 * (2.0 * self.cfg.regularizer_weight * self.grid.nvox)


def energy(v0, x, y, cfg):
    """``(total, data, regularizer)`` of ``v0`` at the resolution of ``x``."""
    state = RegistrationProblem(x, y, cfg).evaluate(v0, with_gradient=False)
    return state.total, state.data, state.reg


def energy_gradient(v0, x, y, cfg):
    """Sobolev gradient of :func:`energy` w.r.t. ``v0`` (see module docstring)."""
    problem = RegistrationProblem(x, y, cfg)
    return problem.gradient(problem.evaluate(v0))


def endpoint_gradient(x, y, inverse_map, cfg):
    """``nu(-K(dData/dY . grad(Y o phi^{-1})))``: gradient w.r.t. a velocity acting at t = 1."""
    problem = RegistrationProblem(x, y, cfg)
    warped = warp(y, inverse_map)
    _, dgrad = problem.data_term(warped.data)
    grads = np.stack([g.data for g in spatial_gradient(warped)])
    dense = -(dgrad[None] * grads)
    grid = problem.grid
    return BandlimitedVelocity(problem.operator.apply_k(grid.project(dense)), grid.full_dims, grid.trunc_dims)


def transfer_velocity(v0, full_dims, trunc_dims, voxel_ratio):
    """Carry coefficients to another grid so the dense field keeps its physical size.

    ``voxel_ratio`` is old voxel size over new voxel size (2 when refining
    by a factor of two); displacements grow by it in new voxel units.
    """
    new_grid = spectral_grid(tuple(full_dims), tuple(trunc_dims))
    old_grid = v0.grid
    out = np.zeros((3,) + new_grid.band_shape, dtype=np.complex128)
    src, dst = [], []
    for h_old, h_new, n_old, n_new in zip(old_grid.half_widths, new_grid.half_widths, old_grid.band_shape, new_grid.band_shape):
        k = np.arange(-min(h_old, h_new), min(h_old, h_new) + 1)
        src.append(k % n_old)
        dst.append(k % n_new)
    out[(Ellipsis,) + np.ix_(*dst)] = v0.coeffs[(Ellipsis,) + np.ix_(*src)]
    out *= float(voxel_ratio) * new_grid.nvox / old_grid.nvox
    return BandlimitedVelocity(out, new_grid.full_dims, new_grid.trunc_dims)


def _regularizer_line_minimum(problem, grad):
    """Step along ``-grad`` minimising the quadratic regularizer model; caps steps when ``w`` is large."""
    curvature = 2.0 * problem.regularizer(grad)
    if not curvature > 0:
        return np.inf
    return sobolev_inner(grad, grad, problem.operator) / curvature


def _descend(problem, v0, max_iterations, cfg, level, trace, callback=None):
    """Momentum gradient descent with backtracking at one pyramid level."""
    # a velocity inherited from a coarser level can fold once resolved on the finer grid
    for attempt in range(cfg.max_backtracks + 1):
        try:
            state = problem.evaluate(v0)
            break
        except DivergenceError:
            if attempt == cfg.max_backtracks:
                raise
            log.warning("level %d: starting velocity folds on this grid; halving it", level)
            v0 = v0 * 0.5
    trace.append(EnergyRecord(level, 0, state.data, state.reg, state.total))
    buffer = problem.zero_velocity()
    history = [state.total]
    scale = None
    accepted_any = False
    for it in range(1, max_iterations + 1):
        grad = problem.gradient(state)
        if scale is None:
            scale = 1.0
            if cfg.normalize_step:
                peak = float(np.max(np.abs(problem.grid.lift(grad.coeffs))))
                if not peak > 0:
                    return state, CONVERGED, accepted_any
                scale = 1.0 / peak
        trial = None
        mu, eta = cfg.momentum, min(cfg.step_size * scale, _regularizer_line_minimum(problem, grad))
        for attempt in range(cfg.max_backtracks + 2):
            step = buffer * mu - grad * eta
            try:
                candidate = problem.evaluate(state.v0 + step)
            except DivergenceError:
                candidate = None
            if candidate is not None and candidate.total <= state.total:
                trial = candidate
                break
            if mu > 0:
                mu = 0.0
            else:
                eta *= 0.5
        if trial is None:
            # the smallest step barely moves E: a (possibly non-smooth) stationary point, not a bad step size
            if candidate is not None and candidate.total - state.total <= cfg.tolerance * abs(state.total):
                return state, CONVERGED, accepted_any
            log.info("level %d: no decreasing step at iteration %d", level, it)
            return state, STALLED, accepted_any
        accepted_any = True
        buffer, state = step, trial
        trace.append(EnergyRecord(level, it, state.data, state.reg, state.total))
        if callback is not None:
            callback(trace[-1])
        log.debug("level %d it %d: E=%.6g (data %.6g, reg %.6g)", level, it, state.total, state.data, state.reg)
        history.append(state.total)
        if len(history) > 5:
            ref = history[-6]
            if ref - history[-1] <= cfg.tolerance * abs(ref):
                return state, CONVERGED, accepted_any
    return state, EXHAUSTED, accepted_any


def minimize(x, y, cfg, callback=None):
    """Register moving ``y`` onto fixed ``x``; returns a :class:`RegistrationResult`."""
    if tuple(x.dims) != tuple(y.dims):
        raise StructuralError(f"fixed {tuple(x.dims)} and moving {tuple(y.dims)} dims differ")
    trace = []
    v0 = None
    previous = None
    status = EXHAUSTED
    stalled = progressed = False
    for level, (factor, iters) in enumerate(zip(cfg.pyramid_levels, cfg.max_iterations)):
        problem = RegistrationProblem(downsample(x, factor), downsample(y, factor), cfg)
        if v0 is None:
            v0 = problem.zero_velocity()
        else:
            v0 = transfer_velocity(v0, problem.grid.full_dims, problem.grid.trunc_dims, previous / factor)
        state, status, moved = _descend(problem, v0, iters, cfg, level, trace, callback)
        progressed = progressed or moved
        stalled = stalled or status == STALLED
        v0 = state.v0
        previous = factor
    if stalled and not progressed:
        raise StepSizeError("no step decreased the energy, even after backtracking; reduce step_size")
    inverse_map = DisplacementField(state.trajectory.final_inverse_map.data, x.spacing, x.origin)
    return RegistrationResult(v0, inverse_map, warp(y, inverse_map), tuple(trace), status != EXHAUSTED)


__all__ = [
    "EnergyRecord",
    "RegistrationConfig",
    "RegistrationProblem",
    "RegistrationResult",
    "endpoint_gradient",
    "energy",
    "energy_gradient",
    "minimize",
    "sobolev_inner",
    "transfer_velocity",
]
