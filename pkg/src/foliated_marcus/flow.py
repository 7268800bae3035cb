"""Vector-field bundles and the Marcus jump flow.

A Marcus jump of size ``z`` moves the state along the time-1 map of the
autonomous ODE ``dY/dsigma = F(Y) z``. Fields may register a closed-form flow,
which is then used instead of numerical integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

DEFAULT_TOL = 1e-10
DEFECT_GRID_POINTS = 33


class FlowError(RuntimeError):
    pass


class MissingDerivativeError(ValueError):
    pass


@dataclass(frozen=True)
class VectorFieldSpec:
    """Matrix-valued field ``x -> F(x)`` of shape ``(ambient_dim, noise_dim)``.

    Attributes:
        ambient_dim: state dimension m.
        noise_dim: driver dimension r.
        fn: ``x -> F(x)``, an ``(m, r)`` array.
        lipschitz_bound: declared Lipschitz constant, used to size RK4 substeps.
        derivative: optional ``x -> DF(x)`` of shape ``(m, r, m)`` with
            ``DF[i, j, k] = dF_ij / dx_k``.
        exact_flow: optional closed form ``(z, x) -> Phi^{Fz}(x)``.
        linear: optional ``(r, m, m)`` stack ``L`` with
            ``F(x) z = sum_j z_j (L_j x + C_j)``. Lets drift steps use matrix
            algebra.
        constant: optional ``(m, r)`` offset ``C`` of an affine field; only
            meaningful together with ``linear``.
        is_zero: the field vanishes identically.
    """

    ambient_dim: int
    noise_dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz_bound: float = 1.0
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_flow: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    linear: Optional[np.ndarray] = None
    constant: Optional[np.ndarray] = None
    is_zero: bool = False

    def __call__(self, x) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=float))

    def apply(self, x, z) -> np.ndarray:
        """``F(x) z`` as a vector in R^m."""
        return self(x) @ np.asarray(z, dtype=float)

    def scaled(self, factor: float) -> "VectorFieldSpec":
        """The field ``factor * F``; closed-form flows are rescaled through ``z``."""
        if self.is_zero or factor == 1.0:
            return self
        fn, der, flow = self.fn, self.derivative, self.exact_flow
        return replace(
            self,
            fn=_Scaled(fn, factor),
            lipschitz_bound=abs(factor) * self.lipschitz_bound,
            derivative=None if der is None else _Scaled(der, factor),
            exact_flow=None if flow is None else _ScaledFlow(flow, factor),
            linear=None if self.linear is None else factor * self.linear,
            constant=None if self.constant is None else factor * self.constant,
        )


class _Scaled:
    def __init__(self, fn, factor):
        self.fn, self.factor = fn, factor

    def __call__(self, x):
        return self.factor * self.fn(x)


class _ScaledFlow:
    def __init__(self, flow, factor):
        self.flow, self.factor = flow, factor

    def __call__(self, z, x):
        return self.flow(self.factor * np.asarray(z, dtype=float), x)


class _ZeroField:
    def __init__(self, m, r):
        self.shape = (m, r)

    def __call__(self, x):
        return np.zeros(self.shape)


class _Identity:
    def __call__(self, z, x):
        return np.array(x, dtype=float, copy=True)


def zero_field(m: int, r: int) -> VectorFieldSpec:
    return VectorFieldSpec(
        m,
        r,
        _ZeroField(m, r),
        0.0,
        exact_flow=_Identity(),
        linear=np.zeros((r, m, m)),
        constant=np.zeros((m, r)),
        is_zero=True,
    )


class _LinearEval:
    def __init__(self, mats, const):
        self.mats, self.const = mats, const

    def __call__(self, x):
        # column j is L_j x + C_j
        return np.einsum("jab,b->aj", self.mats, x) + self.const


class _LinearDerivative:
    def __init__(self, mats):
        self.der = np.transpose(mats, (1, 0, 2)).copy()

    def __call__(self, x):
        return self.der


class _AffineFlow:
    def __init__(self, mats, const):
        self.mats, self.const = mats, const

    def __call__(self, z, x):
        z = np.asarray(z, dtype=float)
        m = self.mats.shape[1]
        # augmented generator [[L z, C z], [0, 0]] acting on (x, 1)
        gen = np.zeros((m + 1, m + 1))
        gen[:m, :m] = np.tensordot(z, self.mats, axes=1)
        gen[:m, m] = self.const @ z
        return (expm(gen) @ np.append(x, 1.0))[:m]


def affine_field(mats, const=None) -> VectorFieldSpec:
    """Field ``F(x) z = sum_j z_j (L_j x + C_j)`` with its matrix-exponential flow.

    Args:
        mats: ``(r, m, m)`` stack, or a single ``(m, m)`` matrix when r = 1.
        const: ``(m, r)`` offsets, or ``(m,)`` when r = 1; zero by default.
    """
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    r, m, _ = mats.shape
    const = np.zeros((m, r)) if const is None else np.asarray(const, dtype=float).reshape(m, r)
    lip = float(sum(np.linalg.norm(L, 2) for L in mats)) or 1.0
    return VectorFieldSpec(
        m,
        r,
        _LinearEval(mats, const),
        lip,
        derivative=_LinearDerivative(mats),
        exact_flow=_AffineFlow(mats, const),
        linear=mats,
        constant=const,
    )


def linear_field(mats) -> VectorFieldSpec:
    """Field ``F(x) z = sum_j z_j L_j x``; the flow is a matrix exponential."""
    return affine_field(mats)


def constant_field(const) -> VectorFieldSpec:
    """Field with ``F(x) = const`` for every x; the flow is a translation."""
    const = np.atleast_2d(np.asarray(const, dtype=float).T).T
    m, r = const.shape
    return affine_field(np.zeros((r, m, m)), const)


def _rk4(f, y, n):
    h = 1.0 / n
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def substeps(field: VectorFieldSpec, z) -> int:
    return max(8, math.ceil(4.0 * field.lipschitz_bound * float(np.linalg.norm(z))))


def integrate_jump_ode(field: VectorFieldSpec, z, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Numerical time-1 map of ``dY/dsigma = F(Y) z`` (ignores any closed form).

    RK4 with ``n`` and ``2n`` substeps; when the two disagree by more than
    ``tol`` the solve falls back to adaptive Dormand-Prince (DOP853).
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    f = lambda y: field(y) @ z
    n = substeps(field, z)
    coarse = _rk4(f, x, n)
    fine = _rk4(f, x, 2 * n)
    diff = float(np.max(np.abs(fine - coarse))) if fine.size else 0.0
    if np.all(np.isfinite(fine)) and diff <= tol:
        # Richardson extrapolation for a fourth-order method
        return fine + (fine - coarse) / 15.0
    sol = solve_ivp(lambda s, y: f(y), (0.0, 1.0), x, method="DOP853", rtol=max(tol, 1e-13), atol=tol)
    if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
        raise FlowError(f"jump-flow integration failed for |z| = {np.linalg.norm(z):.6g}: {sol.message}")
    return sol.y[:, -1]


def jump_flow(field: VectorFieldSpec, z, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Marcus jump map ``Phi^{Fz}(x) = Y(1)`` with ``dY/dsigma = F(Y) z, Y(0) = x``.

    Args:
        field: the coefficient F.
        z: jump size in R^r.
        x: pre-jump state in R^m.
        tol: local error tolerance per unit flow time.

    Returns:
        The post-jump state. ``z = 0`` returns a copy of ``x`` without any
        arithmetic.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if field.is_zero or not np.any(z):
        return x.copy()
    if field.exact_flow is not None:
        return np.asarray(field.exact_flow(z, x), dtype=float)
    return integrate_jump_ode(field, z, x, tol)


def marcus_jump_correction(field: VectorFieldSpec, z, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Second-order remainder ``Phi^{Fz}(x) - x - F(x) z`` of a Marcus jump."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if field.is_zero or not np.any(z):
        return np.zeros_like(x)
    return jump_flow(field, z, x, tol) - x - field.apply(x, z)


def _defect_integrand(field, z, y):
    # (DF(y) z) F(y) z, with DF(y) z the m x m matrix sum_j z_j dF_{.j}/dx
    dfz = np.tensordot(field.derivative(y), z, axes=([1], [0]))
    return dfz @ field.apply(y, z)


def second_order_defect(field: VectorFieldSpec, z, x, y, t_grid=None, tol: float = DEFAULT_TOL) -> float:
    """Largest deviation of ``(DF(Y)z) F(Y)z`` along the flows from ``x`` and ``y``.

    ``Y(t; x) = Phi^{F(tz)}(x)`` is evaluated at each ``t`` of ``t_grid``
    (default: 33 equispaced points in [0, 1]).
    """
    if field.derivative is None:
        raise MissingDerivativeError("second_order_defect needs field.derivative")
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.any(z) or np.array_equal(x, y):
        return 0.0
    if t_grid is None:
        t_grid = np.linspace(0.0, 1.0, DEFECT_GRID_POINTS)
    worst = 0.0
    for t in np.asarray(t_grid, dtype=float):
        if not 0.0 <= t <= 1.0:
            raise ValueError("t_grid must lie in [0, 1]")
        yx = jump_flow(field, t * z, x, tol)
        yy = jump_flow(field, t * z, y, tol)
        gap = _defect_integrand(field, z, yx) - _defect_integrand(field, z, yy)
        worst = max(worst, float(np.linalg.norm(gap)))
    return worst


def check_derivative(field: VectorFieldSpec, points, h: float = 1e-6) -> float:
    """Largest forward-difference mismatch of ``field.derivative`` over ``points``."""
    if field.derivative is None:
        raise MissingDerivativeError("no derivative declared")
    worst = 0.0
    for x in np.atleast_2d(points):
        der = field.derivative(x)
        for k in range(field.ambient_dim):
            e = np.zeros(field.ambient_dim)
            e[k] = 1.0
            fd = (field(x + h * e) - field(x)) / h
            worst = max(worst, float(np.max(np.abs(fd - der[:, :, k]))))
    return worst
