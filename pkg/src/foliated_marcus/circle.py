"""Lévy rotations of the plane, foliated by circles, with transversal perturbations.

The fast system ``dX = Lambda X <> dZ`` rotates the state by the driver, so
``X_t = r0 (cos(theta0 + Z_t), sin(theta0 + Z_t))``. A perturbation
``eps K dt`` with ``K`` constant (case A) or linear ``K(x) = A x`` (case B)
moves the radius; the slow driver enters through one of three coefficients:

* ``additive``: ``K~ = I`` (planar translation by ``eps dZ~``),
* ``radial``: ``K~(x) z = x <k, z>`` (radius multiplied by ``e^{eps <k, z>}``),
  whose transversal part depends on the radius only,
* ``none``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, stats

from .flow import VectorFieldSpec, constant_field, linear_field, zero_field
from .levy import DensityLevyMeasure, DiscreteLevyMeasure, JumpPath, LevyMeasureSpec, characteristic_exponent
from .marcus import FoliatedSystem, MarcusPath, make_grid

LAMBDA = np.array([[0.0, -1.0], [1.0, 0.0]])

SLOW_KINDS = ("additive", "radial", "none")
PERTURBATIONS = ("constant", "linear")


class OriginError(ValueError):
    pass


class DegenerateExponentError(ValueError):
    pass


class _RotationEval:
    def __call__(self, x):
        return np.array([[-x[1]], [x[0]]])


class _RotationDerivative:
    der = LAMBDA.reshape(2, 1, 2).copy()

    def __call__(self, x):
        return self.der


class _RotationFlow:
    def __call__(self, z, x):
        c, s = math.cos(z[0]), math.sin(z[0])
        return np.array([x[0] * c - x[1] * s, x[0] * s + x[1] * c])


def rotation_field() -> VectorFieldSpec:
    """``F(x) = Lambda x`` with the closed-form rotation flow."""
    return VectorFieldSpec(
        2,
        1,
        _RotationEval(),
        1.0,
        derivative=_RotationDerivative(),
        exact_flow=_RotationFlow(),
        linear=LAMBDA[None].copy(),
        constant=np.zeros((2, 1)),
    )


class _RadialFlow:
    def __init__(self, k):
        self.k = k

    def __call__(self, z, x):
        return x * math.exp(float(self.k @ z))


def radial_slow_field(k, dim: int = 2) -> VectorFieldSpec:
    """``K~(x) z = x <k, z>`` on R^dim, flow ``x e^{<k, z>}``."""
    k = np.asarray(k, dtype=float)
    base = linear_field(k[:, None, None] * np.eye(dim)[None])
    return VectorFieldSpec(
        dim,
        k.size,
        base.fn,
        base.lipschitz_bound,
        derivative=base.derivative,
        exact_flow=_RadialFlow(k),
        linear=base.linear,
        constant=base.constant,
    )


def radius(x) -> np.ndarray:
    """Transversal coordinate: distance to the origin, shape ``(..., 1)``."""
    return np.linalg.norm(np.asarray(x, dtype=float), axis=-1, keepdims=True)


class _RadialComponent:
    """``h(x) = <K(x), x / |x|>`` for ``K(x) = A x + b``."""

    def __init__(self, A, b):
        self.A, self.b = A, b

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = x @ self.A.T + self.b
        return np.sum(k * x, axis=-1, keepdims=True) / radius(x)


class _LinearQ:
    def __init__(self, rate):
        self.rate = rate

    def __call__(self, v):
        return self.rate * np.asarray(v, dtype=float)

    def as_field(self, d: int) -> VectorFieldSpec:
        return linear_field(self.rate * np.eye(d))


def default_fast_levy() -> DensityLevyMeasure:
    """Rate-2 compound Poisson with Student-t(5) jumps: heavy tailed, moments of order < 5."""
    return DensityLevyMeasure(rate=2.0, law=stats.t(df=5), declared_order=5.0, is_symmetric=True)


def default_slow_levy() -> DiscreteLevyMeasure:
    """Sixteen planar atoms: radii 0.5 and 1.5 at the angles k pi / 4, mass 1/8 each."""
    ang = np.arange(8) * np.pi / 4
    unit = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    atoms = np.vstack([0.5 * unit, 1.5 * unit])
    return DiscreteLevyMeasure(np.full(16, 0.125), atoms)


@dataclass(frozen=True)
class CircleExample:
    """Parameters of the circle example.

    Attributes:
        perturbation: ``"linear"`` for ``K(x) = A x`` or ``"constant"`` for ``K = K_vec``.
        A: 2x2 matrix of the linear perturbation.
        K_vec: constant perturbation vector.
        slow_kind: ``"additive"``, ``"radial"`` or ``"none"``.
        radial_k: vector ``k`` of the radial slow coefficient.
        x0: initial point, nonzero.
        fast: Lévy measure of the scalar fast driver.
        slow: Lévy measure of the planar slow driver.
    """

    perturbation: str = "linear"
    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    K_vec: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    slow_kind: str = "radial"
    radial_k: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    x0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    fast: LevyMeasureSpec = field(default_factory=default_fast_levy)
    slow: Optional[LevyMeasureSpec] = field(default_factory=default_slow_levy)

    def __post_init__(self):
        if self.perturbation not in PERTURBATIONS:
            raise ValueError(f"perturbation must be one of {PERTURBATIONS}")
        if self.slow_kind not in SLOW_KINDS:
            raise ValueError(f"slow_kind must be one of {SLOW_KINDS}")
        for name in ("A", "K_vec", "radial_k", "x0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.A.shape != (2, 2) or self.K_vec.shape != (2,) or self.x0.shape != (2,):
            raise ValueError("A must be 2x2, K_vec and x0 planar")
        if not np.any(self.x0):
            raise OriginError("x0 must differ from the origin")
        if self.fast.dimension != 1:
            raise ValueError("the fast driver is scalar")
        if self.slow is not None and self.slow.dimension != 2:
            raise ValueError("the slow driver is planar")

    @property
    def r0(self) -> float:
        return float(np.linalg.norm(self.x0))

    @property
    def theta0(self) -> float:
        return math.atan2(self.x0[1], self.x0[0])

    @property
    def effective_A(self) -> np.ndarray:
        return self.A if self.perturbation == "linear" else np.zeros((2, 2))

    @property
    def effective_b(self) -> np.ndarray:
        return self.K_vec if self.perturbation == "constant" else np.zeros(2)

    @property
    def q_rate(self) -> float:
        """``Q(r) = q_rate * r``; zero for a constant perturbation."""
        return 0.5 * float(np.trace(self.effective_A))

    def averaged_solution(self, t) -> np.ndarray:
        """Deterministic part of the averaged equation, ``r0 e^{(a+d) t / 2}``."""
        return self.r0 * np.exp(self.q_rate * np.asarray(t, dtype=float))

    def eta_l2(self, t: float) -> float:
        """Exact L^2 ergodic rate of the radial drift at time ``t``."""
        if self.perturbation == "linear":
            return math.sqrt(deviation_moments(self.fast, self.A, self.r0, t, self.theta0)[1])
        return math.sqrt(constant_deviation_moments(self.fast, self.K_vec, t, self.theta0)[1])

    def system(self) -> FoliatedSystem:
        if self.perturbation == "linear":
            K = linear_field(self.A)
        else:
            K = constant_field(self.K_vec.reshape(2, 1))
        if self.slow_kind == "additive":
            Kt, KtV = constant_field(np.eye(2)), None
        elif self.slow_kind == "radial":
            Kt, KtV = radial_slow_field(self.radial_k), radial_slow_field(self.radial_k, dim=1)
        else:
            Kt, KtV = zero_field(2, 2), zero_field(1, 2)
        return FoliatedSystem(
            F0=zero_field(2, 1),
            F=rotation_field(),
            K=K,
            K_tilde=Kt,
            projection=radius,
            leaf_invariant=lambda x: float(np.linalg.norm(x)),
            K_tilde_V=KtV,
            fast_levy=self.fast,
            slow_levy=None if self.slow_kind == "none" else self.slow,
            transversal_drift=_RadialComponent(self.effective_A, self.effective_b),
            averaged_drift=_LinearQ(self.q_rate),
        )


def exact_fast_path(z_path: JumpPath, x0, grid=None) -> MarcusPath:
    """Closed-form fast solution ``r0 (cos(theta0 + Z_t), sin(theta0 + Z_t))``.

    The angle is accumulated unwrapped; Cartesian states are derived from it.
    By default the grid is ``{0, T}`` joined with the jump times.
    """
    x0 = np.asarray(x0, dtype=float)
    r0 = float(np.linalg.norm(x0))
    if r0 == 0.0:
        raise OriginError("x0 must differ from the origin")
    theta0 = math.atan2(x0[1], x0[0])
    if grid is None:
        grid = make_grid(z_path.horizon, z_path.horizon, z_path.times)
    grid = np.asarray(grid, dtype=float)
    post = theta0 + z_path.value(grid)[:, 0]
    pre = theta0 + z_path.left_value(grid)[:, 0]
    to_xy = lambda th: r0 * np.stack([np.cos(th), np.sin(th)], axis=1)
    states, pre_states = to_xy(post), to_xy(pre)
    states[0] = pre_states[0] = x0
    jumped = np.isin(grid, z_path.times)
    return MarcusPath(grid, states, pre_states, jumped, np.zeros(grid.size, dtype=bool))


def radial_K(A, point) -> float:
    """Radial component ``<A x, x / |x|>`` of the linear field ``K(x) = A x``."""
    A = np.asarray(A, dtype=float)
    x = np.asarray(point, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise OriginError("the radial component is undefined at the origin")
    return float((A @ x) @ x / r)


def radial_K_polar(A, theta: float, r: float) -> float:
    """Same quantity in polar form, with the point written as ``(r sin theta, r cos theta)``.

    ``r (a sin^2 theta + d cos^2 theta + (b + c) sin theta cos theta)``.
    """
    if r <= 0:
        raise OriginError("r must be positive")
    (a, b), (c, d) = np.asarray(A, dtype=float)
    s, co = math.sin(theta), math.cos(theta)
    return r * (a * s * s + d * co * co + (b + c) * s * co)


def analytic_Q(A, r: float) -> float:
    """Leaf average of the radial component: ``(a + d) r / 2``."""
    A = np.asarray(A, dtype=float)
    return 0.5 * (A[0, 0] + A[1, 1]) * r


def _e1(x: complex, t: float) -> complex:
    # (e^{xt} - 1) / x
    if x == 0:
        return complex(t)
    return complex(np.expm1(x * t) / x)


def _e2(x: complex, t: float) -> complex:
    # (e^{xt} - 1 - xt) / x^2
    u = x * t
    if abs(u) < 1e-3:
        return t * t * (0.5 + u / 6.0 + u * u / 24.0 + u**3 / 120.0)
    return complex((np.expm1(u) - u) / (x * x))


def _cquad(f, a, b) -> complex:
    re = integrate.quad(lambda s: f(s).real, a, b, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    im = integrate.quad(lambda s: f(s).imag, a, b, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    return complex(re, im)


def _mixed(psi2: complex, psi4: complex, t: float) -> complex:
    # int_0^t int_0^s e^{(s - u) psi2 + u psi4} du ds
    diff = psi4 - psi2
    if abs(diff) * t > 1e-3:
        return (_e1(psi4, t) - _e1(psi2, t)) / diff
    return _cquad(lambda s: np.exp(s * psi2) * _e1(diff, s), 0.0, t)


def _psi_pair(nu: LevyMeasureSpec, k: int = 2):
    psi_k = characteristic_exponent(nu, float(k))
    psi_2k = characteristic_exponent(nu, float(2 * k))
    if abs(psi_k.real) <= 1e-14 * max(1.0, abs(psi_k)):
        raise DegenerateExponentError(f"Re Psi({k}) = 0: the driver does not mix at frequency {k}")
    return psi_k, psi_2k


def _oscillation(A, theta0: float) -> complex:
    # pi_r K / r = (a + d) / 2 + Re(g e^{2 i Z})
    (a, b), (c, d) = np.asarray(A, dtype=float)
    return complex(0.5 * (a - d), -0.5 * (b + c)) * complex(math.cos(2 * theta0), math.sin(2 * theta0))


def oscillation_moments(nu: LevyMeasureSpec, g: complex, k: int, t: float):
    """Exact mean and second moment of ``(1/t) int_0^t Re(g e^{i k Z_s}) ds``.

    Uses ``E e^{i p Z_s} = e^{s Psi(p)}`` and independent increments.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    psi_k, psi_2k = _psi_pair(nu, k)
    mean = (g * _e1(psi_k, t)).real / t
    second = ((g * g * _mixed(psi_k, psi_2k, t)).real + abs(g) ** 2 * _e2(psi_k, t).real) / (t * t)
    return mean, max(second, 0.0)


def deviation_moments(nu: LevyMeasureSpec, A, r: float, t: float, theta0: float = 0.0):
    """Exact first and second moment of ``D_t = (1/t) int_0^t pi_r K(X_s) ds - (a+d) r / 2``."""
    mean, second = oscillation_moments(nu, _oscillation(A, theta0), 2, t)
    return r * mean, r * r * second


def constant_deviation_moments(nu: LevyMeasureSpec, K, t: float, theta0: float = 0.0):
    """Same for a constant field ``K``: its radial part ``K1 cos + K2 sin`` averages to 0."""
    K = np.asarray(K, dtype=float)
    g = complex(K[0], -K[1]) * complex(math.cos(theta0), math.sin(theta0))
    return oscillation_moments(nu, g, 1, t)


def radial_second_moment(nu: LevyMeasureSpec, A, t: float, theta0: float = 0.0) -> float:
    """``E[((1/t) int_0^t pi_r K(X_s) / r ds)^2]``; tends to ``(a + d)^2 / 4``."""
    A = np.asarray(A, dtype=float)
    half = 0.5 * (A[0, 0] + A[1, 1])
    mean, second = deviation_moments(nu, A, 1.0, t, theta0)
    return half * half + 2.0 * half * mean + second


def analytic_eta_bounds(nu: LevyMeasureSpec, A, r: float, t: float, p: int, theta0: float = 0.0) -> float:
    """Analytic ergodic rate of the radial component.

    ``p = 1``: the bound ``|d - a| r / (2 |Re Psi(2)| t)``.
    ``p = 2``: the exact L^2 deviation ``(E D_t^2)^(1/2)``.

    Raises:
        DegenerateExponentError: if ``Re Psi(2) = 0``.
    """
    A = np.asarray(A, dtype=float)
    if p == 1:
        psi2, _ = _psi_pair(nu)
        return abs(A[1, 1] - A[0, 0]) * r / (2.0 * abs(psi2.real) * t)
    if p == 2:
        return math.sqrt(deviation_moments(nu, A, r, t, theta0)[1])
    raise ValueError("p must be 1 or 2")
