"""Foliated Marcus SDEs driven by pure-jump Lévy noise.

The unperturbed system is

    dX = F0(X) dt + F(X) <> dZ,

and its transversal perturbation adds ``eps (K(X) dt + K~(X) <> dZ~)``.
Between jumps the drift, including the compensator of truncated small
jumps, is integrated on the grid: exactly when it is affine, with RK4
otherwise. Every jump applies the Marcus jump map of its coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .flow import DEFAULT_TOL, VectorFieldSpec, jump_flow, zero_field
from .levy import JumpPath, LevyMeasureSpec, sample_jump_path
from .rng import rng_stream
from .stats import Estimate, lp_estimate


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class FoliatedSystem:
    """Vector-field bundle of a foliated slow/fast system.

    Attributes:
        F0: leaf-tangent drift, an ``(m, 1)`` field.
        F: leaf-tangent Marcus coefficient of the fast driver, ``(m, r)``.
        K: transversal drift perturbation, ``(m, 1)``.
        K_tilde: Marcus coefficient of the slow driver, ``(m, r')``. Its
            transversal part must depend only on the leaf (see
            :meth:`transversal_consistency_defect`).
        projection: ``pi``, maps an array of states ``(..., m)`` to
            transversal coordinates ``(..., d)``.
        leaf_invariant: optional scalar function constant on leaves.
        K_tilde_V: the slow coefficient written on the transversal space,
            ``(d, r')``; drives the averaged equation.
        fast_levy: Lévy measure of the fast driver ``Z``.
        slow_levy: Lévy measure of the slow driver ``Z~``.
        transversal_drift: ``h(x) = D pi(x) K(x)`` in ``R^d``; the observable
            whose leaf average is the averaged drift.
        averaged_drift: ``Q(v)``, leaf average of ``transversal_drift``, if known.
    """

    F0: VectorFieldSpec
    F: VectorFieldSpec
    K: VectorFieldSpec
    K_tilde: VectorFieldSpec
    projection: Callable[[np.ndarray], np.ndarray]
    leaf_invariant: Optional[Callable[[np.ndarray], float]] = None
    K_tilde_V: Optional[VectorFieldSpec] = None
    fast_levy: Optional[LevyMeasureSpec] = None
    slow_levy: Optional[LevyMeasureSpec] = None
    transversal_drift: Optional[Callable[[np.ndarray], np.ndarray]] = None
    averaged_drift: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        m = self.F.ambient_dim
        for name in ("F0", "K", "K_tilde"):
            if getattr(self, name).ambient_dim != m:
                raise DimensionMismatchError(f"{name} has ambient dimension {getattr(self, name).ambient_dim}, expected {m}")
        for name in ("F0", "K"):
            if getattr(self, name).noise_dim != 1:
                raise DimensionMismatchError(f"{name} must be an (m, 1) drift field")

    @property
    def ambient_dim(self) -> int:
        return self.F.ambient_dim

    @property
    def fast_noise_dim(self) -> int:
        return self.F.noise_dim

    @property
    def slow_noise_dim(self) -> int:
        return self.K_tilde.noise_dim

    def project(self, states) -> np.ndarray:
        """``pi`` applied row-wise, always returning shape ``(..., d)``."""
        states = np.asarray(states, dtype=float)
        out = np.asarray(self.projection(states), dtype=float)
        if out.shape[: states.ndim - 1] != states.shape[:-1]:
            out = np.apply_along_axis(lambda x: np.atleast_1d(self.projection(x)), -1, states)
        return out.reshape(states.shape[:-1] + (-1,))

    def projection_jacobian(self, x, h: float = 1e-6) -> np.ndarray:
        """Central-difference Jacobian of ``pi`` at ``x``, shape ``(d, m)``."""
        x = np.asarray(x, dtype=float)
        cols = []
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = h
            cols.append((self.project(x + e) - self.project(x - e)) / (2.0 * h))
        return np.stack(cols, axis=-1)

    def tangency_defect(self, points, rng: np.random.Generator) -> float:
        """Largest transversal component ``|D pi(x) F(x) z|`` over points and random unit z."""
        worst = 0.0
        for x in np.atleast_2d(points):
            z = rng.standard_normal(self.fast_noise_dim)
            z /= np.linalg.norm(z)
            for field in (self.F, self.F0):
                zz = z if field is self.F else np.ones(1)
                worst = max(worst, float(np.max(np.abs(self.projection_jacobian(x) @ field.apply(x, zz)))))
        return worst

    def transversal_consistency_defect(self, points, rng: np.random.Generator, tol: float = DEFAULT_TOL) -> float:
        """Largest change of ``D pi . K~`` when moving along a leaf.

        Each point is moved along its leaf by a random fast jump; a
        transversally consistent slow coefficient has the same transversal
        part at both points.
        """
        worst = 0.0
        for x in np.atleast_2d(points):
            z = rng.standard_normal(self.fast_noise_dim) * 2.0
            y = jump_flow(self.F, z, x, tol)
            vx = self.projection_jacobian(x) @ self.K_tilde(x)
            vy = self.projection_jacobian(y) @ self.K_tilde(y)
            worst = max(worst, float(np.max(np.abs(vx - vy))))
        return worst


@dataclass(frozen=True)
class MarcusPath:
    """Càdlàg trajectory on a grid.

    ``states[k]`` is the value at ``times[k]`` after any jump there and
    ``pre_states[k]`` the left limit. ``fast_jump``/``slow_jump`` flag the grid
    points carrying a jump of each driver.
    """

    times: np.ndarray
    states: np.ndarray
    pre_states: np.ndarray
    fast_jump: np.ndarray
    slow_jump: np.ndarray

    @property
    def jump_flags(self) -> np.ndarray:
        """0 none, 1 fast, 2 slow, 3 both."""
        return self.fast_jump.astype(int) + 2 * self.slow_jump.astype(int)

    def time_integral(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Cumulative ``int_0^{t_k} fn(X_s) ds`` by the trapezoid rule.

        ``fn`` must accept an ``(n, m)`` array. Each gap uses the state just
        after ``t_k`` and the left limit at ``t_{k+1}``; the rule is exact
        for piecewise-constant paths.
        """
        left = np.asarray(fn(self.states[:-1]), dtype=float)
        right = np.asarray(fn(self.pre_states[1:]), dtype=float)
        dt = np.diff(self.times).reshape((-1,) + (1,) * (left.ndim - 1))
        incr = 0.5 * (left + right) * dt
        return np.concatenate([np.zeros((1,) + left.shape[1:]), np.cumsum(incr, axis=0)])

    def state_at(self, t) -> np.ndarray:
        """State at the last grid point ``<= t``."""
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.states[k]


class _AffineDrift:
    """Drift ``M x + c``, stepped exactly with the matrix exponential of the augmented generator."""

    def __init__(self, M, c):
        self.M, self.c = M, c
        m = M.shape[0]
        self.gen = np.zeros((m + 1, m + 1))
        self.gen[:m, :m] = M
        self.gen[:m, m] = c
        self.cache = {}

    def step(self, x, h):
        ops = self.cache.get(h)
        if ops is None:
            E = expm(h * self.gen)
            m = self.M.shape[0]
            ops = (E[:m, :m], E[:m, m])
            if len(self.cache) < 64:
                self.cache[h] = ops
        return ops[0] @ x + ops[1]


class _GeneralDrift:
    def __init__(self, parts):
        self.parts = parts

    def __call__(self, x):
        out = np.zeros_like(x)
        for field, coef in self.parts:
            out = out + field(x) @ coef
        return out

    def step(self, x, h):
        k1 = self(x)
        k2 = self(x + 0.5 * h * k1)
        k3 = self(x + 0.5 * h * k2)
        k4 = self(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def build_drift(parts: Sequence[tuple]):
    """Combine ``(field, coefficient)`` pairs into one drift; ``None`` if it vanishes."""
    live = []
    for field, coef in parts:
        coef = np.asarray(coef, dtype=float)
        if field.is_zero or not np.any(coef):
            continue
        live.append((field, coef))
    if not live:
        return None
    if all(f.linear is not None for f, _ in live):
        m = live[0][0].ambient_dim
        M = np.zeros((m, m))
        c = np.zeros(m)
        for f, coef in live:
            M += np.tensordot(coef, f.linear, axes=1)
            if f.constant is not None:
                c += f.constant @ coef
        if not np.any(M) and not np.any(c):
            return None
        return _AffineDrift(M, c)
    return _GeneralDrift(live)


def make_grid(horizon: float, mesh_dt: float, *time_arrays) -> np.ndarray:
    """Regular mesh on ``[0, horizon]`` merged with every given time."""
    if mesh_dt <= 0:
        raise ValueError("mesh_dt must be positive")
    n = max(1, math.ceil(horizon / mesh_dt - 1e-12))
    parts = [np.linspace(0.0, horizon, n + 1)]
    parts.extend(np.asarray(t, dtype=float) for t in time_arrays)
    return np.unique(np.concatenate(parts))


def jump_positions(grid: np.ndarray, times) -> np.ndarray:
    """Grid index of every jump time; each time must be a grid point."""
    times = np.asarray(times, dtype=float)
    idx = np.searchsorted(grid, times)
    if np.any(idx >= grid.size) or np.any(grid[np.minimum(idx, grid.size - 1)] != times):
        raise ValueError("every jump time must be a grid point")
    return idx


def integrate_on_grid(
    grid: np.ndarray,
    x0,
    drift,
    jumps: Sequence[tuple],
    tol: float = DEFAULT_TOL,
) -> MarcusPath:
    """Core Marcus integrator on a fixed grid.

    Args:
        grid: increasing times starting at 0.
        x0: initial state.
        drift: object with ``step(x, h)`` or ``None`` for no drift.
        jumps: up to two ``(field, positions, sizes)`` triples: grid indices
            of the jumps and their sizes. At a shared grid point the triples
            are applied in the given order (fast first by convention).
        tol: jump-flow tolerance.
    """
    x = np.array(x0, dtype=float)
    n = grid.size
    states = np.empty((n, x.size))
    pre = np.empty((n, x.size))
    states[0] = pre[0] = x
    flags = []
    drivers = []
    for field, positions, sizes in jumps:
        positions = np.asarray(positions, dtype=np.intp)
        if positions.size and (positions.min() < 1 or positions.max() >= n):
            raise ValueError("jump positions must index grid points after t = 0")
        pos = np.full(n, -1, dtype=np.intp)
        pos[positions] = np.arange(positions.size)
        flags.append(pos >= 0)
        if not field.is_zero and positions.size:
            drivers.append((field, pos, sizes))
    gaps = np.diff(grid)
    for k in range(1, n):
        if drift is not None:
            x = drift.step(x, gaps[k - 1])
        pre[k] = x
        for field, pos, sizes in drivers:
            j = pos[k]
            if j >= 0:
                x = jump_flow(field, sizes[j], x, tol)
        states[k] = x
    while len(flags) < 2:
        flags.append(np.zeros(n, dtype=bool))
    return MarcusPath(grid, states, pre, flags[0], flags[1])


def _check_path(path: JumpPath, r: int, name: str):
    if path.dimension != r:
        raise DimensionMismatchError(f"{name} has dimension {path.dimension}, expected {r}")


def unperturbed_drift(sys: FoliatedSystem, z_path: JumpPath):
    return build_drift([(sys.F0, np.ones(1)), (sys.F, z_path.compensator_drift)])


def perturbed_drift(sys: FoliatedSystem, eps: float, z_path: JumpPath, ztilde_path: JumpPath):
    return build_drift(
        [
            (sys.F0, np.ones(1)),
            (sys.F, z_path.compensator_drift),
            (sys.K, np.array([eps])),
            (sys.K_tilde, eps * ztilde_path.compensator_drift),
        ]
    )


def integrate_unperturbed(
    sys: FoliatedSystem,
    z_path: JumpPath,
    mesh_dt: float,
    tol: float = DEFAULT_TOL,
    *,
    x0,
    extra_times=(),
) -> MarcusPath:
    """Solve ``dX = F0 dt + F <> dZ`` along a sampled fast path.

    Truncated small jumps enter through their compensator drift ``F(X) b``.
    """
    _check_path(z_path, sys.fast_noise_dim, "z_path")
    grid = make_grid(z_path.horizon, mesh_dt, z_path.times, np.asarray(extra_times, dtype=float))
    jumps = [(sys.F, jump_positions(grid, z_path.times), z_path.sizes)]
    return integrate_on_grid(grid, x0, unperturbed_drift(sys, z_path), jumps, tol)


def integrate_perturbed(
    sys: FoliatedSystem,
    eps: float,
    z_path: JumpPath,
    ztilde_path: JumpPath,
    mesh_dt: float,
    tol: float = DEFAULT_TOL,
    *,
    x0,
    extra_times=(),
) -> MarcusPath:
    """Solve the eps-perturbed system on the merged jump grid.

    Slow jumps apply the flow of ``eps K~``; a fast and a slow jump at the
    same instant are applied fast first.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    return _integrate_perturbed(sys, eps, z_path, ztilde_path, mesh_dt, tol, x0, extra_times)


def _integrate_perturbed(sys, eps, z_path, ztilde_path, mesh_dt, tol, x0, extra_times=(), grid=None):
    _check_path(z_path, sys.fast_noise_dim, "z_path")
    _check_path(ztilde_path, sys.slow_noise_dim, "ztilde_path")
    if not math.isclose(z_path.horizon, ztilde_path.horizon, rel_tol=1e-12):
        raise ValueError("both driving paths must share the horizon")
    if grid is None:
        grid = make_grid(
            z_path.horizon, mesh_dt, z_path.times, ztilde_path.times, np.asarray(extra_times, dtype=float)
        )
    drift = perturbed_drift(sys, eps, z_path, ztilde_path)
    slow = sys.K_tilde.scaled(eps) if eps != 0.0 else zero_field(sys.ambient_dim, sys.slow_noise_dim)
    jumps = [
        (sys.F, jump_positions(grid, z_path.times), z_path.sizes),
        (slow, jump_positions(grid, ztilde_path.times), ztilde_path.sizes),
    ]
    return integrate_on_grid(grid, x0, drift, jumps, tol)


def sample_drivers(sys: FoliatedSystem, horizon: float, seed: int, index: int, fast_threshold=None, slow_threshold=None):
    """Fast and slow jump paths of one replica on ``(0, horizon]``."""
    z = sample_jump_path(sys.fast_levy, horizon, fast_threshold, rng_stream(seed, index, "fast"))
    if sys.slow_levy is None:
        zt = JumpPath.empty(horizon, sys.slow_noise_dim)
    else:
        zt = sample_jump_path(sys.slow_levy, horizon, slow_threshold, rng_stream(seed, index, "slow"))
    return z, zt


def perturbation_gap_samples(
    sys: FoliatedSystem,
    eps: float,
    T: float,
    indices,
    seed: int,
    *,
    x0,
    mesh_dt: float = 0.01,
    tol: float = DEFAULT_TOL,
    fast_threshold=None,
    slow_threshold=None,
) -> np.ndarray:
    """Per-replica ``sup_t |pi(X^eps_t) - pi(X_t)|`` under synchronous coupling.

    Both solutions use the same drivers and the same grid; the sup runs over
    grid values and left limits.
    """
    out = np.empty(len(indices))
    for i, idx in enumerate(indices):
        z, zt = sample_drivers(sys, T, seed, idx, fast_threshold, slow_threshold)
        grid = make_grid(T, mesh_dt, z.times, zt.times)
        xe = _integrate_perturbed(sys, eps, z, zt, mesh_dt, tol, x0, grid=grid)
        x = _integrate_perturbed(sys, 0.0, z, zt, mesh_dt, tol, x0, grid=grid)
        d_post = np.abs(sys.project(xe.states) - sys.project(x.states))
        d_pre = np.abs(sys.project(xe.pre_states) - sys.project(x.pre_states))
        out[i] = max(float(d_post.max()), float(d_pre.max()))
    return out


def perturbation_gap(
    sys: FoliatedSystem,
    eps: float,
    T: float,
    p: float,
    replicas: int,
    seed: int,
    *,
    x0,
    mesh_dt: float = 0.01,
    tol: float = DEFAULT_TOL,
    fast_threshold=None,
    slow_threshold=None,
) -> Estimate:
    """Monte Carlo ``(E sup_t |pi(X^eps_t) - pi(X_t)|^p)^(1/p)`` with standard error."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    samples = perturbation_gap_samples(
        sys, eps, T, range(replicas), seed, x0=x0, mesh_dt=mesh_dt, tol=tol,
        fast_threshold=fast_threshold, slow_threshold=slow_threshold,
    )
    return lp_estimate(samples, p)
