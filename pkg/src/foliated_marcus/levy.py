"""Pure-jump Lévy measures: moments, characteristic exponent and path sampling.

Three kinds of measure are supported:

* :class:`DiscreteLevyMeasure` -- finitely many atoms in R^r (any dimension),
  sampled through an alias table.
* :class:`DensityLevyMeasure` -- finite activity on R, given by a total rate and
  a jump-size law (a frozen ``scipy.stats`` distribution, or a density plus a
  sampler supplied by the caller).
* :class:`TruncatedStableLevyMeasure` -- symmetric stable-like density
  ``scale * |z|^(-1-alpha)`` on ``delta_inner < |z| <= 1`` with a power tail
  ``scale * |z|^(-1-tail_index)`` beyond 1.

Sampling always goes through an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

# quadrature tolerances shared by every density computation
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8

DEFAULT_INFINITE_ACTIVITY_THRESHOLD = 1e-3

REGIONS = ("inner", "outer", "all")


class LevyError(ValueError):
    pass


class DivergentMomentError(LevyError):
    pass


class InfiniteRateError(LevyError):
    pass


class DimensionError(LevyError):
    pass


class QuadratureError(LevyError):
    pass


def _quad(f, a, b, **kw):
    with np.errstate(all="ignore"):
        val, err, *info = integrate.quad(
            f, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=500, full_output=1, **kw
        )
    if len(info) > 1 and "Warning" not in str(info[1]) and info[1]:
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge: {info[1]}")
    if not math.isfinite(val):
        raise QuadratureError(f"quadrature on [{a}, {b}] returned {val}")
    return val


class AliasTable:
    """Vose alias table for O(1) sampling from a finite distribution."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        n = len(w)
        prob = w * n / w.sum()
        alias = np.zeros(n, dtype=np.intp)
        small = [i for i in range(n) if prob[i] < 1.0]
        large = [i for i in range(n) if prob[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            alias[s] = g
            prob[g] = prob[g] + prob[s] - 1.0
            (small if prob[g] < 1.0 else large).append(g)
        for i in small + large:
            prob[i] = 1.0
        self.prob = prob
        self.alias = alias

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        n = len(self.prob)
        col = rng.integers(0, n, size=size)
        coin = rng.random(size)
        return np.where(coin < self.prob[col], col, self.alias[col])


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Common interface; concrete kinds override the hooks."""

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    @property
    def infinite_activity(self) -> bool:
        return False

    @property
    def symmetric(self) -> bool:
        return False

    @property
    def moment_order(self) -> float:
        """Outer-region moments are finite for p strictly below this order."""
        return math.inf

    def mass(self, threshold: float = 0.0) -> float:
        """Total mass nu({|z| > threshold})."""
        raise NotImplementedError

    def _band_moment(self, p: float, lo: float, hi: float) -> float:
        """Integral of |z|^p over lo < |z| <= hi (hi may be inf)."""
        raise NotImplementedError

    def band_mean(self, lo: float, hi: float) -> np.ndarray:
        """Vector integral of z over lo < |z| <= hi."""
        raise NotImplementedError

    def sample_sizes(self, rng: np.random.Generator, n: int, threshold: float) -> np.ndarray:
        """``n`` i.i.d. jump sizes from nu restricted to |z| > threshold, normalized."""
        raise NotImplementedError

    def _psi(self, p: float) -> complex:
        raise NotImplementedError

    # shared front-ends

    def moment(self, p: float, region: str = "all", threshold: float = 1.0) -> float:
        return moment(self, p, region, threshold)

    def characteristic_exponent(self, p: float) -> complex:
        return characteristic_exponent(self, p)

    def compensator_drift(self, threshold: float) -> np.ndarray:
        """-int_{threshold < |z| <= 1} z nu(dz); zero when threshold >= 1."""
        if threshold >= 1.0:
            return np.zeros(self.dimension)
        if self.symmetric:
            return np.zeros(self.dimension)
        return -self.band_mean(threshold, 1.0)

    def truncation_bias(self, threshold: float) -> float:
        """Second moment carried by the discarded jumps |z| <= threshold."""
        if threshold <= 0.0:
            return 0.0
        return self._band_moment(2.0, 0.0, threshold)


@dataclass(frozen=True)
class DiscreteLevyMeasure(LevyMeasureSpec):
    """Finite sum of point masses ``sum_k masses[k] * delta_{atoms[k]}``."""

    masses: np.ndarray
    atoms: np.ndarray
    _table: AliasTable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float).reshape(-1)
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        if atoms.shape[0] != masses.shape[0]:
            raise ValueError("masses and atoms must have the same length")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        if np.any(np.all(atoms == 0.0, axis=1) & (masses > 0)):
            raise ValueError("a Lévy measure cannot charge the origin")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "_table", AliasTable(masses) if masses.sum() > 0 else None)

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.atoms, axis=1)

    @property
    def symmetric(self) -> bool:
        """Every atom has a mirror atom of equal mass (up to rounding of the atoms)."""
        n = self.norms
        for a, m, r in zip(self.atoms, self.masses, n):
            gap = np.linalg.norm(self.atoms + a, axis=1)
            match = (gap <= 1e-12 * max(r, 1.0)) & np.isclose(self.masses, m, rtol=1e-12, atol=0.0)
            if not np.any(match):
                return False
        return True

    def mass(self, threshold: float = 0.0) -> float:
        return float(self.masses[self.norms > threshold].sum())

    def _band_moment(self, p, lo, hi):
        n = self.norms
        sel = (n > lo) & (n <= hi)
        return float(np.sum(self.masses[sel] * n[sel] ** p))

    def band_mean(self, lo, hi):
        n = self.norms
        sel = (n > lo) & (n <= hi)
        return (self.masses[sel, None] * self.atoms[sel]).sum(axis=0)

    def sample_sizes(self, rng, n, threshold):
        keep = np.flatnonzero((self.norms > threshold) & (self.masses > 0))
        if n == 0 or keep.size == 0:
            return np.zeros((0, self.dimension))
        if keep.size == len(self.masses):
            idx = self._table.sample(rng, n)
        else:
            idx = keep[AliasTable(self.masses[keep]).sample(rng, n)]
        return self.atoms[idx].copy()

    def _psi(self, p):
        z = self.atoms[:, 0]
        comp = np.where(np.abs(z) <= 1.0, z, 0.0)
        return complex(np.sum(self.masses * (np.exp(1j * p * z) - 1.0 - 1j * p * comp)))


@dataclass(frozen=True)
class DensityLevyMeasure(LevyMeasureSpec):
    """Finite-activity measure ``rate * law(dz)`` on the real line.

    ``law`` is either a frozen ``scipy.stats`` distribution (density, cdf and
    inverse cdf are taken from it) or ``None``, in which case ``density`` (the
    normalized jump-size pdf) and ``sampler(rng, n)`` must be given; restricted
    sampling then falls back to rejection.
    """

    rate: float
    law: object = None
    density: Optional[Callable[[float], float]] = None
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    declared_order: float = math.inf
    is_symmetric: bool = False

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")
        if self.law is None and (self.density is None or self.sampler is None):
            raise ValueError("give either a scipy law or both density and sampler")

    @property
    def dimension(self) -> int:
        return 1

    @property
    def moment_order(self) -> float:
        return self.declared_order

    @property
    def symmetric(self) -> bool:
        return self.is_symmetric

    def pdf(self, z):
        if self.law is not None:
            return self.law.pdf(z)
        return self.density(z)

    def _prob_abs_le(self, threshold: float) -> float:
        if threshold <= 0.0:
            return 0.0
        if self.law is not None:
            return float(self.law.cdf(threshold) - self.law.cdf(-threshold))
        return _quad(self.pdf, -threshold, threshold)

    def mass(self, threshold: float = 0.0) -> float:
        return self.rate * (1.0 - self._prob_abs_le(threshold))

    def _band_moment(self, p, lo, hi):
        if hi <= lo:
            return 0.0
        f = lambda z: abs(z) ** p * (self.pdf(z) + self.pdf(-z))
        if math.isinf(hi):
            mid = max(lo, 1.0)
            total = _quad(f, lo, mid) if mid > lo else 0.0
            return self.rate * (total + _quad(f, mid, math.inf))
        return self.rate * _quad(f, lo, hi)

    def band_mean(self, lo, hi):
        if hi <= lo:
            return np.zeros(1)
        f = lambda z: z * (self.pdf(z) - self.pdf(-z))
        return np.array([self.rate * _quad(f, lo, hi)])

    def sample_sizes(self, rng, n, threshold):
        if n == 0:
            return np.zeros((0, 1))
        if self.law is not None:
            if threshold > 0.0:
                lo, hi = float(self.law.cdf(-threshold)), float(self.law.cdf(threshold))
                u = rng.random(n) * (1.0 - (hi - lo))
                u = np.where(u < lo, u, u + (hi - lo))
            else:
                u = rng.random(n)
            return np.asarray(self.law.ppf(u), dtype=float).reshape(n, 1)
        out = np.empty(0)
        while out.size < n:
            draw = np.asarray(self.sampler(rng, n), dtype=float).reshape(-1)
            out = np.concatenate([out, draw[np.abs(draw) > threshold]])
        return out[:n].reshape(n, 1)

    def _psi(self, p):
        if p == 0.0:
            return 0j
        fplus = lambda z: self.pdf(z) + self.pdf(-z)
        fminus = lambda z: self.pdf(z) - self.pdf(-z)
        w = abs(p)
        sgn = math.copysign(1.0, p)
        # cos/sin weights: QAWO on [0,1], QAWF on [1, inf)
        re = _quad(fplus, 0.0, 1.0, weight="cos", wvar=w) + _quad(fplus, 1.0, math.inf, weight="cos", wvar=w)
        im = _quad(fminus, 0.0, 1.0, weight="sin", wvar=w) + _quad(fminus, 1.0, math.inf, weight="sin", wvar=w)
        im *= sgn
        inner_mean = _quad(lambda z: z * fminus(z), 0.0, 1.0)
        return self.rate * complex(re - 1.0, im - p * inner_mean)


@dataclass(frozen=True)
class TruncatedStableLevyMeasure(LevyMeasureSpec):
    """Symmetric stable-like measure with an inner cutoff and a power tail.

    Density ``scale * |z|^(-1-alpha)`` for ``delta_inner < |z| <= 1`` and
    ``scale * |z|^(-1-tail_index)`` for ``|z| > 1``; ``tail_index`` defaults to
    ``alpha`` (a genuinely stable tail). ``delta_inner = 0`` gives infinite
    activity.
    """

    alpha: float
    scale: float = 1.0
    delta_inner: float = 0.0
    tail_index: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.scale <= 0 or self.delta_inner < 0 or self.delta_inner >= 1.0:
            raise ValueError("need scale > 0 and 0 <= delta_inner < 1")
        if self.tail_index is None:
            object.__setattr__(self, "tail_index", self.alpha)
        if self.tail_index <= 0:
            raise ValueError("tail_index must be positive")

    @property
    def dimension(self) -> int:
        return 1

    @property
    def infinite_activity(self) -> bool:
        return self.delta_inner == 0.0

    @property
    def symmetric(self) -> bool:
        return True

    @property
    def moment_order(self) -> float:
        return self.tail_index

    @staticmethod
    def _power(q, lo, hi):
        # int_lo^hi z^(q-1) dz
        if q == 0.0:
            return math.log(hi / lo)
        if math.isinf(hi):
            return -lo**q / q
        return (hi**q - lo**q) / q

    def _band_moment(self, p, lo, hi):
        total = 0.0
        a, b = max(lo, self.delta_inner), min(hi, 1.0)
        if b > a:
            if a == 0.0:
                if p <= self.alpha:
                    raise DivergentMomentError(f"p={p} <= alpha={self.alpha} diverges at the origin")
                total += b ** (p - self.alpha) / (p - self.alpha)
            else:
                total += self._power(p - self.alpha, a, b)
        a, b = max(lo, 1.0), hi
        if b > a:
            if math.isinf(b) and p >= self.tail_index:
                raise DivergentMomentError(f"p={p} >= tail index {self.tail_index}")
            total += self._power(p - self.tail_index, a, b)
        return 2.0 * self.scale * total

    def mass(self, threshold: float = 0.0) -> float:
        if threshold <= 0.0 and self.infinite_activity:
            return math.inf
        return self._band_moment(0.0, threshold, math.inf)

    def band_mean(self, lo, hi):
        return np.zeros(1)

    def sample_sizes(self, rng, n, threshold):
        if n == 0:
            return np.zeros((0, 1))
        lo = max(threshold, self.delta_inner)
        if lo == 0.0:
            raise InfiniteRateError("sampling an infinite-activity measure needs threshold > 0")
        inner = self._band_moment(0.0, lo, 1.0) if lo < 1.0 else 0.0
        outer = self._band_moment(0.0, max(lo, 1.0), math.inf)
        u = rng.random(n)
        pick_inner = rng.random(n) < inner / (inner + outer)
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        a = self.alpha
        z = np.empty(n)
        if lo < 1.0:
            # inverse cdf of z^(-1-a) on [lo, 1]
            zi = (lo**-a - u * (lo**-a - 1.0)) ** (-1.0 / a)
            z = np.where(pick_inner, zi, z)
        zo = max(lo, 1.0) * (1.0 - u) ** (-1.0 / self.tail_index)
        z = np.where(pick_inner, z, zo)
        return (sign * z).reshape(n, 1)

    def _psi(self, p):
        if p == 0.0:
            return 0j
        a, b, s = self.alpha, self.tail_index, self.scale
        w = abs(p)
        inner = _quad(lambda z: (math.cos(w * z) - 1.0) * z ** (-1.0 - a), self.delta_inner, 1.0)
        tail_cos = _quad(lambda z: z ** (-1.0 - b), 1.0, math.inf, weight="cos", wvar=w)
        tail = tail_cos - 1.0 / b
        return complex(2.0 * s * (inner + tail), 0.0)


def moment(spec: LevyMeasureSpec, p: float, region: str = "all", threshold: float = 1.0) -> float:
    """Integral of ``|z|^p`` against ``spec`` over a region.

    Args:
        spec: the Lévy measure.
        p: exponent, ``p >= 0``.
        region: ``"inner"`` (``|z| <= threshold``), ``"outer"``
            (``|z| > threshold``) or ``"all"``.
        threshold: boundary between the inner and outer region.

    Raises:
        DivergentMomentError: if the requested integral is infinite.
    """
    if p < 0:
        raise ValueError("p must be nonnegative")
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}")
    lo, hi = {"inner": (0.0, threshold), "outer": (threshold, math.inf), "all": (0.0, math.inf)}[region]
    if math.isinf(hi) and p >= spec.moment_order:
        raise DivergentMomentError(f"p={p} exceeds the declared moment order {spec.moment_order}")
    if region != "outer" and p == 0.0 and spec.infinite_activity:
        raise DivergentMomentError("zeroth moment of an infinite-activity measure near the origin")
    return spec._band_moment(p, lo, hi)


def characteristic_exponent(spec: LevyMeasureSpec, p: float) -> complex:
    """Psi(p) = int (e^{ipz} - 1 - ipz 1{|z|<=1}) nu(dz), so E e^{ipZ_t} = e^{t Psi(p)}."""
    if spec.dimension != 1:
        raise DimensionError(f"characteristic exponent needs r = 1, got r = {spec.dimension}")
    return spec._psi(float(p))


@dataclass(frozen=True)
class JumpPath:
    """Realized Lévy path on ``(0, horizon]``: large jumps plus compensator drift.

    ``Z_t = compensator_drift * t + sum_{t_i <= t} z_i``.
    """

    horizon: float
    times: np.ndarray
    sizes: np.ndarray
    threshold: float
    compensator_drift: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        sizes = np.asarray(self.sizes, dtype=float)
        drift = np.atleast_1d(np.asarray(self.compensator_drift, dtype=float))
        if sizes.ndim == 1:
            sizes = sizes.reshape(-1, drift.shape[0])
        if sizes.shape[0] != times.shape[0]:
            raise ValueError("one size per jump time")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] > self.horizon):
            raise ValueError("jump times must be strictly increasing in (0, horizon]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "compensator_drift", drift)

    @property
    def dimension(self) -> int:
        return self.compensator_drift.shape[0]

    @property
    def n_jumps(self) -> int:
        return self.times.shape[0]

    @classmethod
    def empty(cls, horizon: float, dimension: int = 1) -> "JumpPath":
        return cls(horizon, np.zeros(0), np.zeros((0, dimension)), 0.0, np.zeros(dimension))

    def value(self, t):
        """Evaluate Z at time(s) ``t`` (càdlàg)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        csum = np.vstack([np.zeros((1, self.dimension)), np.cumsum(self.sizes, axis=0)])
        return csum[k] + t[..., None] * self.compensator_drift

    def left_value(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="left")
        csum = np.vstack([np.zeros((1, self.dimension)), np.cumsum(self.sizes, axis=0)])
        return csum[k] + t[..., None] * self.compensator_drift

    def time_changed(self, eps: float) -> "JumpPath":
        """Path s -> Z_{eps s} / eps on ``[0, horizon/eps]``.

        Driving ``eps * K`` with the returned path reproduces, in physical
        time, exactly the jumps ``K z_i`` that ``K`` driven by this path makes
        in accelerated time.
        """
        return JumpPath(
            self.horizon / eps,
            self.times / eps,
            self.sizes / eps,
            self.threshold / eps,
            self.compensator_drift.copy(),
        )

    def window(self, start: float, stop: float) -> "JumpPath":
        """Jumps in ``(start, stop]`` shifted to start at time 0."""
        sel = (self.times > start) & (self.times <= stop)
        return JumpPath(
            stop - start, self.times[sel] - start, self.sizes[sel], self.threshold, self.compensator_drift.copy()
        )


def default_threshold(spec: LevyMeasureSpec) -> float:
    return DEFAULT_INFINITE_ACTIVITY_THRESHOLD if spec.infinite_activity else 0.0


def sample_jump_path(
    spec: LevyMeasureSpec,
    horizon: float,
    threshold: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> JumpPath:
    """Sample the jumps of size above ``threshold`` on ``(0, horizon]``.

    Jumps at or below the threshold are replaced by the compensator drift.
    """
    if rng is None:
        raise ValueError("an explicit rng stream is required")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if threshold is None:
        threshold = default_threshold(spec)
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    rate = spec.mass(threshold)
    if math.isinf(rate):
        raise InfiniteRateError("threshold 0 with an infinite-activity measure gives infinitely many jumps")
    n = int(rng.poisson(rate * horizon))
    times = np.sort(horizon - rng.random(n) * horizon)
    sizes = spec.sample_sizes(rng, n, threshold)
    if n > 1 and np.any(np.diff(times) == 0.0):
        # duplicate doubles; merge so times stay strictly increasing
        times, inv = np.unique(times, return_inverse=True)
        merged = np.zeros((times.size, spec.dimension))
        np.add.at(merged, inv, sizes)
        sizes = merged
    return JumpPath(horizon, times, sizes, threshold, spec.compensator_drift(threshold))
