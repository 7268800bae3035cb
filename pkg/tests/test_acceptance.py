"""Acceptance criteria C1-C12, one PASS/FAIL line each.

Tolerances are the contract values; nothing here is loosened to make a
criterion pass. Criteria that the implementation cannot meet fail loudly.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from foliated_marcus.averaging import averaged_drift_mc, averaging_error, envelope_check, estimate_eta, eta_samples
from foliated_marcus.circle import CircleExample, analytic_eta_bounds, radial_second_moment, exact_fast_path, rotation_field
from foliated_marcus.flow import second_order_defect
from foliated_marcus.harness.config import parse_config
from foliated_marcus.harness.runner import run
from foliated_marcus.levy import characteristic_exponent, sample_jump_path
from foliated_marcus.marcus import integrate_unperturbed, perturbation_gap
from foliated_marcus.rng import rng_stream
from foliated_marcus.stats import loglog_fit

SEED = 42
TOL = 1e-10
T_GRID = [5.0, 10.0, 20.0, 50.0, 100.0]
EPS_SWEEP = [0.1, 0.05, 0.02, 0.01]
LAM = 0.8
T_AVG = 0.5
AVG_REPLICAS = 500
CASE_B = np.diag([0.0, 2.0])  # a = 0, d = 2, b = c = 0, r = 1

pytestmark = pytest.mark.acceptance


def report(tag, name, passed, detail):
    line = f"{tag} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert passed, line


def fast_paths(ex, horizon, n, seed=SEED):
    return [sample_jump_path(ex.fast, horizon, None, rng_stream(seed, i, "fast")) for i in range(n)]


# C1


def test_c1_radius_conservation():
    ex = CircleExample(A=CASE_B)
    sys = ex.system()
    t0 = time.perf_counter()
    worst = 0.0
    for z in fast_paths(ex, 10.0, 1000):
        path = integrate_unperturbed(sys, z, 0.1, TOL, x0=ex.x0)
        r = np.linalg.norm(np.concatenate([path.states, path.pre_states]), axis=1)
        worst = max(worst, float(np.max(np.abs(r - 1.0))))
    elapsed = time.perf_counter() - t0
    report(
        "C1", "radius conservation", worst <= 1e-8 and elapsed < 10.0,
        f"max |r - 1| = {worst:.3e} (bound 1e-8), runtime {elapsed:.2f} s (bound 10 s)",
    )


# C2


def test_c2_closed_form_equivalence():
    ex = CircleExample(A=CASE_B)
    sys = ex.system()
    worst = 0.0
    for z in fast_paths(ex, 10.0, 1000, seed=SEED + 1):
        num = integrate_unperturbed(sys, z, 0.1, TOL, x0=ex.x0)
        exact = exact_fast_path(z, ex.x0, grid=num.times)
        worst = max(worst, float(np.max(np.abs(num.states - exact.states))), float(np.max(np.abs(num.pre_states - exact.pre_states))))
    report("C2", "closed-form path equivalence", worst <= 1e-9, f"max deviation {worst:.3e} (bound 1e-9)")


# C3


def test_c3_characteristic_exponent():
    ex = CircleExample()
    ts = np.array([0.5, 1.0, 2.0])
    n = 100_000
    vals = np.empty((n, ts.size), dtype=complex)
    for i in range(n):
        z = sample_jump_path(ex.fast, 2.0, None, rng_stream(SEED, i, "fast"))
        vals[i] = np.exp(2j * z.value(ts)[:, 0])
    psi = characteristic_exponent(ex.fast, 2.0)
    ok, parts = True, []
    for j, t in enumerate(ts):
        target = np.exp(t * psi)
        for comp, f in (("re", np.real), ("im", np.imag)):
            x = f(vals[:, j])
            se = x.std(ddof=1) / math.sqrt(n)
            dev = abs(x.mean() - f(target))
            ok &= dev <= 3 * se
            parts.append(f"t={t:g} {comp}: |diff|={dev:.2e} vs 3SE={3 * se:.2e}")
    report("C3", "characteristic exponent", ok, "; ".join(parts))


# C4


def test_c4_averaged_drift():
    rng = np.random.default_rng(2024)
    ok, parts = True, []
    for k in range(5):
        A = rng.uniform(-2, 2, size=(2, 2))
        ex = CircleExample(A=A)
        sys = ex.system()
        est = averaged_drift_mc(sys, sys.transversal_drift, ex.x0, 10.0, 200.0, 1000, SEED + k)
        target = 0.5 * (A[0, 0] + A[1, 1]) * ex.r0
        dev = abs(est.value[0] - target)
        ok &= dev <= 3 * est.stderr[0]
        parts.append(f"A{k}: {est.value[0]:.4f} vs {target:.4f} (|diff| {dev:.1e}, 3SE {3 * est.stderr[0]:.1e})")
    report("C4", "averaged drift", ok, "; ".join(parts))


# C5


def test_c5_ergodic_rate_p2():
    ex = CircleExample(A=CASE_B)
    sys = ex.system()
    t0 = time.perf_counter()
    est = estimate_eta(sys, sys.transversal_drift, ex.x0, T_GRID, 2.0, 1000, SEED)
    # the same paths with target 0 give |(1/t) int pi_r K / r ds|, whose square has mean E_t
    raw = eta_samples(sys, sys.transversal_drift, lambda v: np.zeros(1), ex.x0, T_GRID, range(1000), SEED)
    elapsed = time.perf_counter() - t0
    fit = est.slope()
    ok = abs(fit.slope + 0.5) <= 0.1
    parts = [f"slope {fit.slope:.3f} (target -0.5 +/- 0.1)"]
    for j, t in enumerate(T_GRID):
        exact = analytic_eta_bounds(ex.fast, CASE_B, 1.0, t, 2)
        sq = raw[:, j] ** 2
        e_t, se_t = sq.mean(), sq.std(ddof=1) / math.sqrt(sq.size)
        e_exact = radial_second_moment(ex.fast, CASE_B, t)
        ok &= abs(est.estimate[j] - exact) <= 3 * est.stderr[j] and abs(e_t - e_exact) <= 3 * se_t
        parts.append(f"t={t:g}: eta {est.estimate[j]:.4f}/{exact:.4f}, E_t {e_t:.4f}/{e_exact:.4f}")
    parts.append(f"runtime {elapsed:.1f} s")
    report("C5", "ergodic rate p=2", ok, "; ".join(parts))


# C6


def test_c6_ergodic_rate_p1():
    ex = CircleExample(A=CASE_B)
    sys = ex.system()
    est = estimate_eta(sys, sys.transversal_drift, ex.x0, T_GRID, 1.0, 1000, SEED)
    ok, parts = True, []
    for j, t in enumerate(T_GRID):
        bound = analytic_eta_bounds(ex.fast, CASE_B, 1.0, t, 1)
        ok &= est.estimate[j] - 3 * est.stderr[j] <= bound
        parts.append(f"t={t:g}: {est.estimate[j]:.4f} +/- {est.stderr[j]:.4f} vs bound {bound:.4f}")
    report("C6", "ergodic rate p=1", ok, "; ".join(parts))


# C7


def test_c7_perturbation_gap_order():
    ex = CircleExample(A=CASE_B)
    sys = ex.system()
    eps = [0.1, 0.05, 0.025]
    vals = [perturbation_gap(sys, e, 1.0, 2.0, 200, SEED, x0=ex.x0).value for e in eps]
    fit = loglog_fit(eps, vals)
    report(
        "C7", "perturbation gap order", abs(fit.slope - 1.0) <= 0.1,
        f"slope {fit.slope:.3f} +/- {fit.slope_stderr:.3f} (target 1.0 +/- 0.1); gaps {', '.join(f'{v:.3e}' for v in vals)}",
    )


# C8, C9, C11 share the averaging sweeps


@pytest.fixture(scope="module")
def sweeps():
    out = {}
    # literal example: X^eps driven by eps dZ~ in physical time, w deterministic
    ex = CircleExample(A=np.eye(2), slow_kind="additive")
    out["B_physical"] = [
        averaging_error(ex.system(), e, T_AVG, 2.0, LAM, 0.5, AVG_REPLICAS, SEED, x0=ex.x0, coupling="physical", eta=ex.eta_l2)
        for e in EPS_SWEEP
    ]
    # radial slow noise, jumps shared between X^eps and w
    ex = CircleExample(A=np.eye(2), slow_kind="radial")
    out["B_synchronous"] = [
        averaging_error(ex.system(), e, T_AVG, 2.0, LAM, 0.5, AVG_REPLICAS, SEED, x0=ex.x0, eta=ex.eta_l2)
        for e in EPS_SWEEP
    ]
    ex = CircleExample(perturbation="constant", K_vec=[1.0, 0.0], slow_kind="none")
    out["A"] = [
        averaging_error(ex.system(), e, T_AVG, 2.0, LAM, 0.5, AVG_REPLICAS, SEED, x0=ex.x0, eta=ex.eta_l2)
        for e in EPS_SWEEP
    ]
    return out


def _envelope_line(recs):
    env = envelope_check(recs, LAM)
    errs = [r.error_lp for r in recs]
    monotone = all(b < a for a, b in zip(errs, errs[1:]))
    rows = ", ".join(f"eps={r.eps:g}: {r.error_lp:.3e}+/-{r.stderr:.1e} <= {b:.3e}" for r, b in zip(recs, env.bounds))
    return monotone, bool(np.all(env.ok)), f"C={env.C:.3e}; {rows}"


def test_c8_averaging_principle(sweeps):
    monotone, enveloped, detail = _envelope_line(sweeps["B_physical"])
    s_mono, s_env, s_detail = _envelope_line(sweeps["B_synchronous"])
    info = f"[radial synchronous variant: monotone={s_mono}, envelope={s_env}; {s_detail}]"
    report(
        "C8", "averaging principle (case B, a=d=1)", monotone and enveloped,
        f"monotone={monotone}, envelope={enveloped}; {detail} {info}",
    )


def test_c9_case_a_bound(sweeps):
    ok, parts = True, []
    for r in sweeps["A"]:
        bound = r.eps**LAM * r.T
        ok &= r.error_lp - 3 * r.stderr <= bound
        parts.append(f"eps={r.eps:g}: {r.error_lp:.3e}+/-{r.stderr:.1e} vs eps^lam T = {bound:.3e}")
    report("C9", "case A bound form", ok, "; ".join(parts))


# C10


def test_c10_quadratic_defect():
    field = rotation_field()

    def ratios(rng, n):
        a, b = rng.uniform(0, 2 * math.pi, (2, n))
        zn = 10 ** rng.uniform(-3, 2, n)
        zs = zn * rng.choice([-1.0, 1.0], n)
        out = np.empty(n)
        for k in range(n):
            x = np.array([math.cos(a[k]), math.sin(a[k])])
            y = np.array([math.cos(b[k]), math.sin(b[k])])
            out[k] = second_order_defect(field, [zs[k]], x, y, tol=TOL) / (np.linalg.norm(x - y) * zn[k] ** 2)
        return zn, out

    _, calib = ratios(np.random.default_rng(1), 2000)
    sup = float(calib.max())
    zn, r = ratios(np.random.default_rng(2), 10_000)
    large = zn >= np.median(zn)
    slope = float(np.polyfit(zn[large], r[large], 1)[0])
    ok = math.isfinite(sup) and r.max() <= 1.05 * sup and abs(slope) <= 0.05
    report(
        "C10", "quadratic defect", ok,
        f"calibration sup {sup:.6f}, max ratio {r.max():.6f} (bound {1.05 * sup:.6f}), large-|z| slope {slope:.2e} (bound 0.05)",
    )


# C11


def test_c11_triangle(sweeps):
    counts = {k: sum(r.triangle_violations for r in recs) for k, recs in sweeps.items()}
    total = sum(r.replicas for recs in sweeps.values() for r in recs)
    report("C11", "triangle decomposition", sum(counts.values()) == 0, f"violations {counts} over {total} replicas")


# C12


def test_c12_determinism(tmp_path):
    cfg = parse_config(
        {
            "schema_version": 1,
            "seed": SEED,
            "replicas": 24,
            "circle": {"A": [[0.0, 0.0], [0.0, 2.0]]},
            "averaging": {"epsilons": [0.1, 0.05, 0.02], "mesh_points": 256},
            "checks": {"enabled": []},
        }
    )
    run(cfg, tmp_path / "w1", workers=1, experiment="averaging")
    run(cfg, tmp_path / "w8", workers=8, experiment="averaging")
    a = (tmp_path / "w1" / "report.csv").read_bytes()
    b = (tmp_path / "w8" / "report.csv").read_bytes()
    report("C12", "determinism", a == b and len(a) > 0, f"CSV 1 vs 8 workers byte-identical: {a == b} ({len(a)} bytes)")
