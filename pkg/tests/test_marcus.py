import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from foliated_marcus.circle import CircleExample, exact_fast_path, radius, rotation_field
from foliated_marcus.flow import constant_field, linear_field, zero_field
from foliated_marcus.levy import DiscreteLevyMeasure, JumpPath, sample_jump_path
from foliated_marcus.marcus import (
    DimensionMismatchError,
    FoliatedSystem,
    integrate_perturbed,
    integrate_unperturbed,
    make_grid,
    perturbation_gap,
    perturbation_gap_samples,
)
from foliated_marcus.rng import rng_stream
from foliated_marcus.stats import linear_fit, loglog_fit


def circle_system(**kw):
    return CircleExample(**kw).system()


def bare_system(K=None, Kt=None):
    return FoliatedSystem(
        F0=zero_field(2, 1),
        F=rotation_field(),
        K=K or zero_field(2, 1),
        K_tilde=Kt or zero_field(2, 2),
        projection=radius,
        fast_levy=CircleExample().fast,
        slow_levy=CircleExample().slow,
    )


def test_single_jump_rotates_state():
    z = 1.1
    path = JumpPath(2.0, [0.7], [z], 0.0, [0.0])
    out = integrate_unperturbed(bare_system(), path, 0.1, x0=[1.0, 0.0])
    before = out.times < 0.7
    assert np.all(out.states[before] == [1.0, 0.0])
    assert np.allclose(out.states[~before], [math.cos(z), math.sin(z)], atol=1e-12)


def test_no_jumps_constant_path():
    out = integrate_unperturbed(bare_system(), JumpPath.empty(3.0), 0.25, x0=[0.3, 0.4])
    assert np.all(out.states == [0.3, 0.4])


def test_integrator_matches_closed_form():
    sys = bare_system()
    for i in range(50):
        z = sample_jump_path(sys.fast_levy, 10.0, None, rng_stream(1, i, "fast"))
        num = integrate_unperturbed(sys, z, 0.5, x0=[1.0, 0.0])
        exact = exact_fast_path(z, [1.0, 0.0], grid=num.times)
        assert np.max(np.abs(num.states - exact.states)) <= 1e-9
        assert np.max(np.abs(num.pre_states - exact.pre_states)) <= 1e-9


def test_zero_perturbation_reduces_to_unperturbed():
    sys = bare_system()
    z = sample_jump_path(sys.fast_levy, 5.0, None, rng_stream(2, 0, "fast"))
    zt = sample_jump_path(sys.slow_levy, 5.0, None, rng_stream(2, 0, "slow"))
    a = integrate_unperturbed(sys, z, 0.1, x0=[1.0, 0.0], extra_times=zt.times)
    b = integrate_perturbed(sys, 0.3, z, zt, 0.1, x0=[1.0, 0.0])
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.states, b.states)


def test_constant_perturbation_against_piecewise_oracle():
    eps, K = 0.01, np.array([1.0, 0.0])
    sys = circle_system(perturbation="constant", K_vec=K, slow_kind="none")
    tol = 1e-10
    for i in range(5):
        z = sample_jump_path(sys.fast_levy, 10.0, None, rng_stream(3, i, "fast"))
        path = integrate_perturbed(sys, eps, z, JumpPath.empty(10.0, 2), 0.05, tol, x0=[1.0, 0.0])
        # translation by eps K between grid points, exact rotation at jumps
        x = np.array([1.0, 0.0])
        jumps = dict(zip(z.times, z.sizes[:, 0]))
        worst = 0.0
        for k in range(1, path.times.size):
            x = x + eps * K * (path.times[k] - path.times[k - 1])
            worst = max(worst, np.max(np.abs(path.pre_states[k] - x)))
            if path.times[k] in jumps:
                c, s = math.cos(jumps[path.times[k]]), math.sin(jumps[path.times[k]])
                x = np.array([c * x[0] - s * x[1], s * x[0] + c * x[1]])
            worst = max(worst, np.max(np.abs(path.states[k] - x)))
        assert worst <= 5 * tol
        r = radius(path.states)[:, 0]
        assert np.max(np.abs(r - 1.0)) <= eps * path.times[-1] * (1 + 1e-9)


def test_radial_perturbation_tracks_exponential():
    eps = 1e-3
    sys = circle_system(A=np.eye(2), slow_kind="none")
    z = sample_jump_path(sys.fast_levy, 0.5 / eps, None, rng_stream(4, 0, "fast"))
    path = integrate_perturbed(sys, eps, z, JumpPath.empty(0.5 / eps, 2), 5.0, x0=[1.0, 0.0])
    assert np.allclose(radius(path.states)[:, 0], np.exp(eps * path.times), rtol=1e-9)


def test_slow_jumps_applied_as_marcus_flows():
    sys = circle_system(A=np.zeros((2, 2)), slow_kind="radial", radial_k=[0.5, 0.5])
    zt = JumpPath(1.0, [0.5], [[0.4, -0.2]], 0.0, [0.0, 0.0])
    path = integrate_perturbed(sys, 0.1, JumpPath.empty(1.0), zt, 0.25, x0=[1.0, 0.0])
    # radial field x <k, z>: the time-1 flow scales by exp(eps <k, z>)
    assert float(radius(path.states[-1])[0]) == pytest.approx(math.exp(0.1 * 0.1), rel=1e-12)


def test_dimension_checks():
    with pytest.raises(DimensionMismatchError):
        FoliatedSystem(zero_field(3, 1), rotation_field(), zero_field(2, 1), zero_field(2, 2), radius)
    with pytest.raises(ValueError):
        integrate_perturbed(bare_system(), 1.0, JumpPath.empty(1.0), JumpPath.empty(1.0, 2), 0.1, x0=[1.0, 0.0])


def test_tangency_and_consistency():
    rng = np.random.default_rng(0)
    sys = circle_system(slow_kind="radial")
    pts = rng.normal(size=(10, 2))
    assert sys.tangency_defect(pts, rng) < 1e-8
    assert sys.transversal_consistency_defect(pts, rng) < 1e-8
    bad = bare_system(Kt=constant_field(np.eye(2)))
    assert bad.transversal_consistency_defect(pts, rng) > 1e-3


def test_grid_contains_jump_times():
    g = make_grid(1.0, 0.3, np.array([0.123, 0.5]))
    assert g[0] == 0.0 and g[-1] == 1.0 and 0.123 in g and 0.5 in g


def test_gap_zero_without_perturbation():
    est = perturbation_gap(bare_system(), 0.1, 1.0, 2.0, 10, 0, x0=[1.0, 0.0])
    assert est.value == 0.0


def test_gap_linear_in_eps():
    sys = circle_system(A=np.diag([0.0, 2.0]))
    eps = [0.1, 0.05, 0.025]
    vals = [perturbation_gap(sys, e, 1.0, 2.0, 60, 42, x0=[1.0, 0.0]).value for e in eps]
    assert loglog_fit(eps, vals).slope == pytest.approx(1.0, abs=0.1)


def test_gap_log_grows_at_most_linearly_in_T():
    sys = circle_system(A=np.diag([0.0, 2.0]))
    Ts = np.array([0.5, 1.0, 2.0, 4.0])
    vals = [perturbation_gap(sys, 0.1, T, 2.0, 40, 42, x0=[1.0, 0.0], mesh_dt=0.05).value for T in Ts]
    fit = linear_fit(Ts, np.log(vals))
    resid = np.log(vals) - (fit.intercept + fit.slope * Ts)
    # concave or linear: the largest T is not above the chord of the fit
    assert resid[-1] <= 0.1
    assert fit.r2 > 0.9


@given(idx=st.integers(0, 10_000))
def test_gap_samples_reproducible(idx):
    sys = circle_system(A=np.diag([0.0, 2.0]))
    a = perturbation_gap_samples(sys, 0.1, 0.5, [idx], 9, x0=[1.0, 0.0], mesh_dt=0.1)
    b = perturbation_gap_samples(sys, 0.1, 0.5, [idx], 9, x0=[1.0, 0.0], mesh_dt=0.1)
    assert np.array_equal(a, b)
