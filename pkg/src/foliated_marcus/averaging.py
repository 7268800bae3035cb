"""Averaged drift, ergodic rate, averaged equation and the averaging error.

On the accelerated time scale ``t / eps`` the transversal coordinate
``pi(X^eps)`` is compared with the solution ``w`` of

    dw = Q(w) dt + K~_V(w) <> dZ~,

where ``Q`` is the leaf average of the transversal drift. The comparison
also records the block decomposition ``delta = A1 + A2 + A3`` of the
integrated drift error on the logarithmic partition of step
``-c T ln eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .flow import DEFAULT_TOL, VectorFieldSpec, zero_field
from .levy import JumpPath, sample_jump_path
from .marcus import (
    FoliatedSystem,
    MarcusPath,
    build_drift,
    integrate_on_grid,
    jump_positions,
    make_grid,
    perturbation_gap_samples,
    perturbed_drift,
    unperturbed_drift,
)
from .rng import rng_stream
from .stats import Estimate, SlopeFit, bootstrap_lp, linear_fit, loglog_fit, lp_estimate, mean_estimate

COMPARISON_MESH_POINTS = 2048
DEFAULT_C = 0.5
# slack for the floating-point triangle inequality, relative to the terms
TRIANGLE_RTOL = 1e-12

COUPLINGS = ("synchronous", "physical")


class PartitionError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PartitionScheme:
    """Blocks of length ``delta = -c T ln eps`` in accelerated time, ``n_blocks`` of them."""

    c: float
    T: float
    eps: float
    delta: float
    n_blocks: int

    @property
    def points(self) -> np.ndarray:
        """``t_n = n delta`` for ``0 <= n <= n_blocks``."""
        return np.arange(self.n_blocks + 1) * self.delta

    @property
    def span(self) -> float:
        return self.n_blocks * self.delta


def make_partition(c: float, T: float, eps: float) -> PartitionScheme:
    """Logarithmic partition of the accelerated interval ``[0, T / eps]``."""
    if not c > 0 or not T > 0:
        raise PartitionError("c and T must be positive")
    if not 0.0 < eps < 1.0:
        raise PartitionError("eps must lie in (0, 1)")
    log_eps = math.log(eps)
    delta = -c * T * log_eps
    n = math.floor(1.0 / (c * eps * abs(log_eps))) + 1
    return PartitionScheme(c, T, eps, delta, n)


def _as_vector_fn(fn, d: Optional[int] = None):
    def wrapped(x):
        out = np.asarray(fn(x), dtype=float)
        return out.reshape(np.asarray(x).shape[:-1] + (-1,))

    return wrapped


def averaged_drift_samples(
    sys: FoliatedSystem,
    h: Callable,
    x0,
    t_burn: float,
    t_avg: float,
    indices: Sequence[int],
    seed: int,
    mesh_dt: float = 1.0,
    tol: float = DEFAULT_TOL,
    fast_threshold=None,
) -> np.ndarray:
    """Per-replica time averages ``(1/t_avg) int_{t_burn}^{t_burn + t_avg} h(X_s) ds``."""
    h = _as_vector_fn(h)
    horizon = t_burn + t_avg
    rows = []
    for idx in indices:
        z = sample_jump_path(sys.fast_levy, horizon, fast_threshold, rng_stream(seed, idx, "fast"))
        grid = make_grid(horizon, mesh_dt, z.times, [t_burn])
        path = integrate_on_grid(
            grid, x0, unperturbed_drift(sys, z), [(sys.F, jump_positions(grid, z.times), z.sizes)], tol
        )
        cum = path.time_integral(h)
        k = np.searchsorted(grid, t_burn)
        rows.append((cum[-1] - cum[k]) / t_avg)
    return np.array(rows)


@dataclass(frozen=True)
class VectorEstimate:
    value: np.ndarray
    stderr: np.ndarray
    replicas: int


def averaged_drift_mc(
    sys: FoliatedSystem,
    h: Callable,
    x0,
    t_burn: float,
    t_avg: float,
    replicas: int,
    seed: int,
    mesh_dt: float = 1.0,
    tol: float = DEFAULT_TOL,
) -> VectorEstimate:
    """Monte Carlo leaf average of ``h`` from time averages of the fast dynamics.

    Slow mixing shows up as a large standard error.
    """
    s = averaged_drift_samples(sys, h, x0, t_burn, t_avg, range(replicas), seed, mesh_dt, tol)
    se = s.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.full(s.shape[1], np.inf)
    return VectorEstimate(s.mean(axis=0), se, replicas)


@dataclass(frozen=True)
class EtaEstimate:
    """Empirical ergodic rate: ``(E|time average - Q|^p)^(1/p)`` at each t."""

    t: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    p: float
    replicas: int

    def envelope(self) -> np.ndarray:
        """Nonincreasing least-squares fit, weighted by inverse variance."""
        w = 1.0 / np.maximum(self.stderr, 1e-300) ** 2
        return isotonic_regression(self.estimate, weights=w, increasing=False).x

    def slope(self) -> SlopeFit:
        return loglog_fit(self.t, self.estimate)

    def rows(self):
        return [
            {"t": float(t), "estimate": float(e), "stderr": float(s)}
            for t, e, s in zip(self.t, self.estimate, self.stderr)
        ]


def eta_samples(
    sys: FoliatedSystem,
    h: Callable,
    Q: Callable,
    x0,
    t_grid,
    indices: Sequence[int],
    seed: int,
    mesh_dt: float = 1.0,
    tol: float = DEFAULT_TOL,
    fast_threshold=None,
) -> np.ndarray:
    """Per-replica deviations ``|(1/t) int_0^t h(X_s) ds - Q(pi(x0))|`` on ``t_grid``.

    Returns an array of shape ``(replicas, len(t_grid))``; for vector-valued
    ``h`` the Euclidean norm of the deviation is taken.
    """
    h = _as_vector_fn(h)
    t_grid = np.asarray(t_grid, dtype=float)
    target = np.atleast_1d(np.asarray(Q(sys.project(np.asarray(x0, dtype=float))), dtype=float))
    horizon = float(t_grid.max())
    out = np.empty((len(indices), t_grid.size))
    for i, idx in enumerate(indices):
        z = sample_jump_path(sys.fast_levy, horizon, fast_threshold, rng_stream(seed, idx, "fast"))
        grid = make_grid(horizon, mesh_dt, z.times, t_grid)
        path = integrate_on_grid(
            grid, x0, unperturbed_drift(sys, z), [(sys.F, jump_positions(grid, z.times), z.sizes)], tol
        )
        cum = path.time_integral(h)[np.searchsorted(grid, t_grid)]
        out[i] = np.linalg.norm(cum / t_grid[:, None] - target, axis=1)
    return out


def eta_from_samples(t_grid, samples: np.ndarray, p: float, seed: int) -> EtaEstimate:
    rng = rng_stream(seed, 0, "bootstrap")
    est = [bootstrap_lp(samples[:, j], p, rng) for j in range(samples.shape[1])]
    return EtaEstimate(
        np.asarray(t_grid, dtype=float),
        np.array([e.value for e in est]),
        np.array([e.stderr for e in est]),
        p,
        samples.shape[0],
    )


def estimate_eta(
    sys: FoliatedSystem,
    h: Callable,
    x0,
    t_grid,
    p: float,
    replicas: int,
    seed: int,
    Q: Optional[Callable] = None,
    mesh_dt: float = 1.0,
    tol: float = DEFAULT_TOL,
) -> EtaEstimate:
    """Empirical ergodic rate of ``h`` with bootstrap standard errors.

    ``Q`` defaults to the system's averaged drift.
    """
    Q = Q if Q is not None else sys.averaged_drift
    if Q is None:
        raise ValueError("an averaged drift Q is required")
    s = eta_samples(sys, h, Q, x0, t_grid, range(replicas), seed, mesh_dt, tol)
    return eta_from_samples(t_grid, s, p, seed)


class _CallableField:
    def __init__(self, fn, d):
        self.fn, self.d = fn, d

    def __call__(self, v):
        return np.asarray(self.fn(v), dtype=float).reshape(self.d, 1)


def as_drift_field(Q, d: int) -> VectorFieldSpec:
    """Wrap ``Q: R^d -> R^d`` as an ``(d, 1)`` field unless it already is one."""
    if isinstance(Q, VectorFieldSpec):
        return Q
    if hasattr(Q, "as_field"):
        return Q.as_field(d)
    return VectorFieldSpec(d, 1, _CallableField(Q, d))


def integrate_averaged(
    Q,
    K_tilde_V: Optional[VectorFieldSpec],
    ztilde_path: JumpPath,
    v0,
    mesh_dt: float,
    tol: float = DEFAULT_TOL,
    extra_times=(),
) -> MarcusPath:
    """Marcus solution of ``dw = Q(w) dt + K~_V(w) <> dZ~`` on ``[0, horizon]``."""
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    grid = make_grid(ztilde_path.horizon, mesh_dt, ztilde_path.times, np.asarray(extra_times, dtype=float))
    pos = jump_positions(grid, ztilde_path.times)
    return _averaged_on_grid(Q, K_tilde_V, grid, pos, ztilde_path.sizes, ztilde_path.compensator_drift, v0, tol)


def _averaged_on_grid(Q, K_tilde_V, grid, positions, sizes, comp, v0, tol):
    """Averaged equation on a given grid; the jumps of ``w`` are flagged as ``fast_jump``."""
    d = v0.size
    parts = [(as_drift_field(Q, d), np.ones(1))]
    if K_tilde_V is None:
        if len(positions):
            raise ValueError("slow jumps given without a transversal slow coefficient")
        Kv = zero_field(d, 1)
    else:
        Kv = K_tilde_V
        parts.append((Kv, comp))
    return integrate_on_grid(grid, v0, build_drift(parts), [(Kv, positions, sizes)], tol)


@dataclass
class ReplicaError:
    """Outcome of one averaging replica."""

    sup_error: float
    delta: float
    a1: float
    a2: float
    a3: float
    violation: bool
    slow_times_acc: np.ndarray = field(repr=False, default=None)
    w_jump_times: np.ndarray = field(repr=False, default=None)


def _sup_error(sys, xe: MarcusPath, w: MarcusPath, k_end: int) -> float:
    post = np.abs(sys.project(xe.states[: k_end + 1]) - w.states[: k_end + 1])
    pre = np.abs(sys.project(xe.pre_states[: k_end + 1]) - w.pre_states[: k_end + 1])
    return float(max(np.linalg.norm(post, axis=1).max(), np.linalg.norm(pre, axis=1).max()))


def _block_terms(sys, eps, part, grid, xe: MarcusPath, z: JumpPath, fast_pos, tol):
    """A1, A2, A3 and delta at the end of the partition, restarting each block.

    The unperturbed restart from ``X^eps(t_n)`` reuses the fast jumps of the
    block (synchronous restart).
    """
    h = _as_vector_fn(sys.transversal_drift)
    Q = _as_vector_fn(sys.averaged_drift)
    Qpi = lambda s: Q(sys.project(s))
    cum_h = xe.time_integral(h)
    cum_q = xe.time_integral(Qpi)
    idx = np.searchsorted(grid, part.points)
    drift = unperturbed_drift(sys, z)
    a1 = np.zeros(cum_h.shape[1])
    a2 = np.zeros_like(a1)
    riemann = np.zeros_like(a1)
    for n in range(part.n_blocks):
        i0, i1 = idx[n], idx[n + 1]
        sub = grid[i0 : i1 + 1] - grid[i0]
        sel = (fast_pos > i0) & (fast_pos <= i1)
        restart = integrate_on_grid(sub, xe.states[i0], drift, [(sys.F, fast_pos[sel] - i0, z.sizes[sel])], tol)
        i_y = restart.time_integral(h)[-1]
        q_n = Qpi(xe.states[i0][None])[0]
        a1 += cum_h[i1] - cum_h[i0] - i_y
        a2 += i_y - part.delta * q_n
        riemann += part.delta * q_n
    end = idx[part.n_blocks]
    a1 *= eps
    a2 *= eps
    a3 = eps * (riemann - cum_q[end])
    delta = eps * (cum_h[end] - cum_q[end])
    return delta, a1, a2, a3


def averaging_replica(
    sys: FoliatedSystem,
    eps: float,
    T: float,
    index: int,
    seed: int,
    *,
    x0,
    c: float = DEFAULT_C,
    coupling: str = "synchronous",
    tol: float = DEFAULT_TOL,
    mesh_points: int = COMPARISON_MESH_POINTS,
    fast_threshold=None,
    slow_threshold=None,
    with_terms: bool = True,
    keep_times: bool = False,
) -> ReplicaError:
    """One replica of the averaging experiment.

    ``coupling="synchronous"``: one slow path ``Z~`` drives ``w`` in
    accelerated time and ``X^eps`` through ``s -> Z~_{eps s} / eps``, so the
    slow jumps coincide pathwise; needs ``sys.K_tilde_V``.
    ``coupling="physical"``: ``X^eps`` is driven by ``eps K~ <> dZ~`` with
    ``Z~`` running in physical time and ``w`` solves ``dw = Q(w) dt``.
    """
    if coupling not in COUPLINGS:
        raise ValueError(f"coupling must be one of {COUPLINGS}")
    x0 = np.asarray(x0, dtype=float)
    part = make_partition(c, T, eps)
    horizon = max(T / eps, part.span)
    z = sample_jump_path(sys.fast_levy, horizon, fast_threshold, rng_stream(seed, index, "fast"))
    slow_rng = rng_stream(seed, index, "slow")
    d_slow = sys.slow_noise_dim
    if sys.slow_levy is None:
        zt_acc = JumpPath.empty(eps * horizon, d_slow)
    elif coupling == "synchronous":
        zt_acc = sample_jump_path(sys.slow_levy, eps * horizon, slow_threshold, slow_rng)
    else:
        zt_acc = None
    if coupling == "synchronous":
        if sys.K_tilde_V is None and sys.slow_levy is not None:
            raise ValueError("synchronous coupling needs the transversal slow coefficient K_tilde_V")
        tc = zt_acc.time_changed(eps)
        # (eps * horizon) / eps may differ from horizon in the last bit
        zt_phys = JumpPath(horizon, np.minimum(tc.times, horizon), tc.sizes, tc.threshold, tc.compensator_drift)
    else:
        if sys.slow_levy is None:
            zt_phys = JumpPath.empty(horizon, d_slow)
        else:
            zt_phys = sample_jump_path(sys.slow_levy, horizon, slow_threshold, slow_rng)
    grid = make_grid(horizon, T / (eps * mesh_points), z.times, zt_phys.times, part.points, [T / eps])
    fast_pos = jump_positions(grid, z.times)
    slow_pos = jump_positions(grid, zt_phys.times)
    drift = perturbed_drift(sys, eps, z, zt_phys)
    jumps = [(sys.F, fast_pos, z.sizes), (sys.K_tilde.scaled(eps), slow_pos, zt_phys.sizes)]
    xe = integrate_on_grid(grid, x0, drift, jumps, tol)

    k_end = int(np.searchsorted(grid, T / eps))
    grid_acc = grid[: k_end + 1] * eps
    v0 = sys.project(x0)
    if coupling == "synchronous":
        keep = slow_pos <= k_end
        w = _averaged_on_grid(
            sys.averaged_drift, sys.K_tilde_V, grid_acc, slow_pos[keep], zt_acc.sizes[keep], zt_acc.compensator_drift, v0, tol
        )
    else:
        no_jumps = np.zeros(0, dtype=np.intp)
        w = _averaged_on_grid(sys.averaged_drift, None, grid_acc, no_jumps, np.zeros((0, 1)), None, v0, tol)
    sup_err = _sup_error(sys, xe, w, k_end)

    out = ReplicaError(sup_err, 0.0, 0.0, 0.0, 0.0, False)
    if with_terms and sys.transversal_drift is not None:
        delta, a1, a2, a3 = _block_terms(sys, eps, part, grid, xe, z, fast_pos, tol)
        nd, n1, n2, n3 = (float(np.linalg.norm(v)) for v in (delta, a1, a2, a3))
        bound = n1 + n2 + n3
        out = ReplicaError(sup_err, nd, n1, n2, n3, nd > bound * (1.0 + TRIANGLE_RTOL) + 1e-300)
    if keep_times:
        # slow jumps of X^eps mapped to accelerated time, and the jumps of w
        out.slow_times_acc = grid[slow_pos[slow_pos <= k_end]] * eps
        out.w_jump_times = w.times[w.fast_jump]
    return out


@dataclass(frozen=True)
class AveragingRecord:
    eps: float
    p: float
    lam: float
    c: float
    T: float
    error_lp: float
    stderr: float
    eta_at_scale: float
    a1: float
    a2: float
    a3: float
    replicas: int
    seed: int
    triangle_violations: int
    delta: float


def summarize_replicas(
    results: Sequence[ReplicaError], *, eps, p, lam, c, T, seed, eta_at_scale: float
) -> AveragingRecord:
    err = lp_estimate([r.sup_error for r in results], p)
    return AveragingRecord(
        eps=eps,
        p=p,
        lam=lam,
        c=c,
        T=T,
        error_lp=err.value,
        stderr=err.stderr,
        eta_at_scale=eta_at_scale,
        a1=float(np.mean([r.a1 for r in results])),
        a2=float(np.mean([r.a2 for r in results])),
        a3=float(np.mean([r.a3 for r in results])),
        replicas=len(results),
        seed=seed,
        triangle_violations=int(sum(r.violation for r in results)),
        delta=float(np.mean([r.delta for r in results])),
    )


def averaging_error(
    sys: FoliatedSystem,
    eps: float,
    T: float,
    p: float,
    lam: float,
    c: float,
    replicas: int,
    seed: int,
    *,
    x0,
    tol: float = DEFAULT_TOL,
    coupling: str = "synchronous",
    eta: Optional[Callable[[float], float]] = None,
    mesh_points: int = COMPARISON_MESH_POINTS,
) -> AveragingRecord:
    """Monte Carlo ``(E sup_{t<=T} |pi(X^eps_{t/eps}) - w(t)|^p)^(1/p)`` with block diagnostics.

    ``eta`` evaluates the ergodic rate; it is reported at ``c T |ln eps|``.
    """
    if not 0.0 < T <= 1.0:
        raise ValueError("T must lie in (0, 1]")
    results = [
        averaging_replica(sys, eps, T, i, seed, x0=x0, c=c, coupling=coupling, tol=tol, mesh_points=mesh_points)
        for i in range(replicas)
    ]
    scale = c * T * abs(math.log(eps))
    return summarize_replicas(
        results, eps=eps, p=p, lam=lam, c=c, T=T, seed=seed, eta_at_scale=float(eta(scale)) if eta else float("nan")
    )


@dataclass(frozen=True)
class Envelope:
    """Single-constant envelope ``C T (eps^lam + eta)`` calibrated at the largest eps."""

    C: float
    bounds: np.ndarray
    ok: np.ndarray


def envelope_check(records: Sequence[AveragingRecord], lam: float) -> Envelope:
    recs = sorted(records, key=lambda r: -r.eps)
    ref = recs[0]
    shape = lambda r: r.T * (r.eps**lam + (0.0 if math.isnan(r.eta_at_scale) else r.eta_at_scale))
    C = ref.error_lp / shape(ref) if shape(ref) > 0 else math.inf
    bounds = np.array([C * shape(r) for r in records])
    ok = np.array([r.error_lp <= b for r, b in zip(records, bounds)])
    return Envelope(C, bounds, ok)


@dataclass
class AveragingReport:
    records: list
    slope: Optional[SlopeFit] = None
    envelope: Optional[Envelope] = None
    eta: Optional[EtaEstimate] = None

    @classmethod
    def build(cls, records, lam, eta=None):
        recs = list(records)
        slope = None
        if len(recs) >= 2 and all(r.error_lp > 0 for r in recs):
            slope = loglog_fit([r.eps for r in recs], [r.error_lp for r in recs])
        return cls(recs, slope, envelope_check(recs, lam) if recs else None, eta)


@dataclass(frozen=True)
class Calibration:
    T_values: np.ndarray
    gaps: np.ndarray
    k1: float
    k2: float
    r2: float
    lam_prime: float
    c: float


def calibrate_c(
    sys: FoliatedSystem,
    eps: float,
    T_values,
    p: float,
    lam: float,
    replicas: int,
    seed: int,
    *,
    x0,
    mesh_dt: float = 0.01,
    tol: float = DEFAULT_TOL,
    gap_samples: Optional[Callable] = None,
) -> Calibration:
    """Fit ``gap(T) ~ k1 eps e^{k2 T}`` and set ``c = (1 - lam') / k2`` with ``lam' = (1 + lam) / 2``.

    Raises:
        CalibrationError: when the fitted growth rate ``k2`` is not positive.
    """
    T_values = np.asarray(T_values, dtype=float)
    gaps = []
    for T in T_values:
        if gap_samples is None:
            s = perturbation_gap_samples(sys, eps, float(T), range(replicas), seed, x0=x0, mesh_dt=mesh_dt, tol=tol)
        else:
            s = gap_samples(float(T))
        gaps.append(lp_estimate(s, p).value)
    gaps = np.array(gaps)
    fit = linear_fit(T_values, np.log(gaps / eps))
    if not fit.slope > 0:
        raise CalibrationError(f"fitted k2 = {fit.slope:.6g} is not positive")
    lam_prime = 0.5 * (1.0 + lam)
    return Calibration(T_values, gaps, math.exp(fit.intercept), fit.slope, fit.r2, lam_prime, (1.0 - lam_prime) / fit.slope)
