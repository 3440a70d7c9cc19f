"""Acceptance suite: one function per criterion returning ``(passed, detail)``.

Run under pytest (one PASS/FAIL line per criterion is printed) or directly
with ``python3 tests/test_acceptance.py``.
"""
import functools
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from oracles import augmented_lagrangian_sdp, planted_sdp  # noqa: E402
from sosbound import boundengine, dynsys, hbalance, sdpcore, simulate  # noqa: E402
from sosbound.boundengine import LOWER, UPPER, BoundQuery, bound, escalate  # noqa: E402
from sosbound.polyring import Polynomial, lie_derivative, monomial_basis  # noqa: E402
from sosbound.soscert import LinearPolyExpr, gram_parameterize, is_psd, reconstruct  # noqa: E402

DUFFING = dict(delta=0.1, alpha=1.0, beta=0.04, F=1.0)
CI_DEGREE = 8  # degree 10 does not converge reliably; the criterion allows degree 8 in CI
CONTAIN_TOL = 1e-3


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# 1 -------------------------------------------------------------------------

def criterion_1():
    x = Polynomial.variable(0, 1)
    res, dt = _timed(lambda: bound(BoundQuery(dynsys.cubic1d(), x * x, UPPER, 2)))
    c = res.V.coeff((2,))
    ok = res.reliable and abs(res.bound - 1.0) <= 1e-5 and abs(c - 0.5) <= 1e-4 and dt < 1.0
    return ok, f"U={res.bound:.8f} V_x2={c:.6f} time={dt:.2f}s"


# 2 -------------------------------------------------------------------------

def criterion_2():
    t0 = time.perf_counter()
    X2, Y2, XY = (2, 0), (0, 2), (1, 1)
    p = Polynomial({(4, 0): 2.0, (0, 4): 5.0, (2, 2): 1.0}, 2)
    block, cons = gram_parameterize(LinearPolyExpr.const(p), [X2, Y2, XY])
    pos = {m: k for k, m in enumerate(block.basis)}
    inv = {pos[m]: k + 1 for k, m in enumerate((X2, Y2, XY))}
    got = {}
    for con in cons:
        terms = frozenset((min(inv[i], inv[j]), max(inv[i], inv[j]), w) for _, i, j, w in con.gram_terms)
        got[terms] = con.rhs_constant
    expected = {
        frozenset({(1, 1, 1.0)}): 2.0,
        frozenset({(2, 2, 1.0)}): 5.0,
        frozenset({(3, 3, 1.0), (1, 2, 2.0)}): 1.0,
        frozenset({(1, 3, 2.0)}): 0.0,
        frozenset({(2, 3, 2.0)}): 0.0,
    }
    exact = got == expected
    window = []
    for q12, feasible in [(-math.sqrt(10) + 1e-6, True), (0.0, True), (0.5, True),
                          (-math.sqrt(10) - 1e-3, False), (0.5 + 1e-3, False)]:
        Qp = np.array([[2.0, q12, 0.0], [q12, 5.0, 0.0], [0.0, 0.0, 1.0 - 2.0 * q12]])
        idx = [pos[X2], pos[Y2], pos[XY]]
        Q = np.zeros((3, 3))
        Q[np.ix_(idx, idx)] = Qp
        window.append(is_psd(Q) == feasible and reconstruct(Q, block.basis).allclose(p, 1e-12))
    dt = time.perf_counter() - t0
    ok = exact and all(window) and dt < 1.0
    return ok, f"constraints_exact={exact} psd_window={sum(window)}/5 time={dt:.2f}s"


# 3 -------------------------------------------------------------------------

def criterion_3(count=50):
    t0 = time.perf_counter()
    worst_err, worst_gap, bad = 0.0, 0.0, 0
    for seed in range(count):
        p = planted_sdp(np.random.default_rng(5000 + seed))
        sol = sdpcore.solve(sdpcore.SdpProblem.from_dense(p.C, p.A, p.b))
        ref = augmented_lagrangian_sdp(p.C, p.A, p.b)
        err = abs(sol.dual_objective - ref) / max(1.0, abs(ref))
        worst_err = max(worst_err, err)
        worst_gap = max(worst_gap, sol.rel_gap)
        if sol.status is not sdpcore.SolverStatus.OPTIMAL or sol.rel_gap > 1e-8 or err > 1e-5:
            bad += 1
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 30.0
    return ok, f"failed={bad}/{count} worst_rel_gap={worst_gap:.1e} worst_oracle_err={worst_err:.1e} time={dt:.1f}s"


# 4 -------------------------------------------------------------------------

def _duffing_pair(omega, degree=CI_DEGREE):
    x2 = Polynomial.variable(0, 4) ** 2
    sysm = dynsys.duffing(omega=omega, **DUFFING)
    lo = bound(BoundQuery(sysm, x2, LOWER, degree))
    up = bound(BoundQuery(sysm, x2, UPPER, degree))
    return lo, up


def criterion_4(omegas=None):
    t0 = time.perf_counter()
    omegas = np.linspace(0.2, 2.0, 21) if omegas is None else omegas
    single_bad, unreliable, multi_wide, multi_count = [], [], 0, 0
    for w in omegas:
        lo, up = _duffing_pair(float(w))
        three = hbalance.duffing_discriminant(omega=float(w), **DUFFING) > 0
        if not (lo.reliable and up.reliable):
            unreliable.append(round(float(w), 3))
            continue
        gap = up.bound - lo.bound
        if three:
            multi_count += 1
            multi_wide += gap > 0.1
        elif gap >= 1e-2:
            single_bad.append(round(float(w), 3))
    dt = time.perf_counter() - t0
    ok = not single_bad and not unreliable and multi_wide >= 1 and dt < 1800
    return ok, (f"degree={CI_DEGREE} points={len(omegas)} single_valued_gap_violations={single_bad} "
                f"unreliable={unreliable} multivalued_wide={multi_wide}/{multi_count} time={dt:.0f}s")


# 5 -------------------------------------------------------------------------

def _contained(sysm, phi, lo, up, count=20, seed=0, box=2.0):
    ens = simulate.ensemble_average(sysm, phi, count, box=box, seed=seed, t_transient=200.0,
                                    t_average=400.0, dt=1e-2, whole_periods=True)
    vals = ens.bounded
    inside = (vals >= lo - CONTAIN_TOL) & (vals <= up + CONTAIN_TOL)
    return bool(vals.size == count and inside.all()), vals


def criterion_5():
    t0 = time.perf_counter()
    parts, ok = [], True
    x2 = Polynomial.variable(0, 4) ** 2
    for w in (0.5, 1.2, 1.8):
        lo, up = _duffing_pair(w)
        good, vals = _contained(dynsys.duffing(omega=w, **DUFFING), x2, lo.value, up.value)
        ok &= good
        parts.append(f"duffing w={w}: [{lo.value:.5f},{up.value:.5f}] sims [{vals.min():.5f},{vals.max():.5f}]"
                     f" {'ok' if good else 'OUT'}")
    phi = dynsys.pendulum_observable()
    for w in (0.8, 1.0):
        sysm = dynsys.pendulum(0.1, 0.1, w)
        lo = bound(BoundQuery(sysm, phi, LOWER, 6))
        up = bound(BoundQuery(sysm, phi, UPPER, 6))
        good, vals = _contained(sysm, phi, lo.value, up.value)
        ok &= good
        parts.append(f"pendulum w={w}: [{lo.value:.5f},{up.value:.5f}] sims [{vals.min():.5f},{vals.max():.5f}]"
                     f" {'ok' if good else 'OUT'}")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    return ok, "; ".join(parts) + f" time={dt:.0f}s"


# 6 -------------------------------------------------------------------------

def criterion_6():
    t0 = time.perf_counter()
    sysm = dynsys.pendulum(0.1, 0.1, 1.0)
    phi = dynsys.pendulum_observable()
    up = bound(BoundQuery(sysm, phi, UPPER, 6))
    lo = bound(BoundQuery(sysm, phi, LOWER, 6))
    # the bound is sharp on the about-0 orbit, so compare up to simulation error
    about0 = simulate.time_average(sysm, phi, dynsys.pendulum_lifted_state(0.0, 0.0, 0.1), t_transient=200.0,
                                   t_average=400.0, dt=1e-2, whole_periods=True).value
    dt = time.perf_counter() - t0
    ok = (up.reliable and lo.reliable and abs(up.bound - 1.5) <= 0.3 and lo.bound <= about0 + CONTAIN_TOL and dt < 300)
    return ok, (f"upper={up.value:.5f} lower={lo.value:.5f} about0_average={about0:.5f} "
                f"margin={about0 - lo.bound:.1e} time={dt:.0f}s")


# 7 -------------------------------------------------------------------------

def criterion_7():
    t0 = time.perf_counter()
    dtau = 1e-3
    forced = dynsys.duffing_forced(omega=1.2, **DUFFING)
    x0 = np.array([0.5, -0.2])
    a = simulate.integrate(dynsys.autonomize_periodic(forced), np.concatenate([x0, dynsys.forcing_initial_state(1.0)]),
                           130.0, dtau)
    b = simulate.integrate_nonautonomous(forced.rhs(), x0, 130.0, dtau)
    keep = a.t >= 30.0
    err_d = float(np.max(np.abs(a.x[keep, 0] - b.x[keep, 0])))
    F = 0.1
    c = simulate.integrate(dynsys.pendulum(0.1, F, 1.0), dynsys.pendulum_lifted_state(0.3, 0.0, F), 130.0, dtau)
    d = simulate.integrate_nonautonomous(dynsys.pendulum_direct_rhs(0.1, F, 1.0), np.array([0.3, 0.0]), 130.0, dtau)
    keep = c.t >= 30.0
    ec = 0.5 * c.x[keep, 0] ** 2 - c.x[keep, 2]
    ed = 0.5 * d.x[keep, 1] ** 2 - np.cos(d.x[keep, 0])
    err_p = float(np.max(np.abs(ec - ed)))
    dt = time.perf_counter() - t0
    ok = err_d <= 1e-6 and err_p <= 1e-6 and dt < 60
    return ok, f"duffing_x_err={err_d:.1e} pendulum_energy_err={err_p:.1e} time={dt:.0f}s"


# 8 -------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _rederived_relation():
    """Harmonic balance of the 7th-order sine redone symbolically, as a function of ``(R, omega, gamma, F)``."""
    import sympy as sp

    R, w, g, f, t = sp.symbols("R omega gamma F t", positive=True)
    th = R * sp.cos(t)
    s7 = sum((-1) ** k * th ** (2 * k + 1) / sp.factorial(2 * k + 1) for k in range(4))
    c1 = sp.integrate(sp.expand(s7) * sp.cos(t), (t, 0, 2 * sp.pi)) / sp.pi
    expr = ((w ** 2 - sp.expand(c1 / R)) ** 2 + (g * w) ** 2) * R ** 2 - f ** 2
    return sp.lambdify((R, w, g, f), expr)


def _rederived_pendulum(u, gamma, F, omega):
    return _rederived_relation()(math.sqrt(u), omega, gamma, F)


def _tilt(sweep):
    ws = np.array([p.omega for p in sweep.points])
    env = np.array([max(p.amplitudes) for p in sweep.points])
    k = int(np.argmax(env))
    left = (env[k] - env[k - 1]) / (ws[k] - ws[k - 1]) if k > 0 else math.nan
    right = (env[k + 1] - env[k]) / (ws[k + 1] - ws[k]) if k < ws.size - 1 else math.nan
    return hbalance.tilt_direction(sweep), left, right


def criterion_8():
    t0 = time.perf_counter()
    res = [r for w in np.linspace(0.2, 2.0, 91) for r in hbalance.duffing_response(omega=w, **DUFFING).residuals]
    max_res = max(res)
    lin = hbalance.duffing_response(0.1, 1.0, 0.0, 1.0, 1.0).amplitudes
    lin_err = abs(lin[0] - 1.0 / (0.1 * 1.0)) if len(lin) == 1 else math.inf
    rng = np.random.default_rng(1)
    coef_err = 0.0
    for _ in range(20):
        u, om, ga, fo = rng.uniform(0.01, 9.0), rng.uniform(0.3, 2.0), rng.uniform(0.01, 0.5), rng.uniform(0.0, 0.5)
        ref = _rederived_pendulum(u, ga, fo, om)
        coef_err = max(coef_err, abs(hbalance.pendulum_relation(u, ga, fo, om) - ref) / max(1.0, abs(ref)))
    d_tilt, d_left, _ = _tilt(hbalance.duffing_sweep(omegas=np.linspace(0.2, 2.0, 361), **DUFFING))
    p_tilts = [_tilt(hbalance.pendulum_sweep(0.1, F, np.linspace(0.5, 1.5, 201))) for F in (0.1, 0.15, 0.2)]
    tilt_ok = d_tilt == 1 and d_left > 0 and all(t == -1 and r < 0 for t, _, r in p_tilts)
    dt = time.perf_counter() - t0
    ok = max_res < 1e-10 and lin_err <= 1e-9 and coef_err <= 1e-10 and tilt_ok and dt < 10
    return ok, (f"max_residual={max_res:.1e} linear_err={lin_err:.1e} relation_vs_rederivation={coef_err:.1e} "
                f"tilt duffing={d_tilt:+d} pendulum={[t for t, _, _ in p_tilts]} time={dt:.1f}s")


# 9 -------------------------------------------------------------------------

def _random_poly(rng, nvars=3, terms=5, deg=3):
    return Polynomial({tuple(rng.integers(0, deg + 1, nvars)): float(rng.integers(-5, 6)) for _ in range(terms)}, nvars)


def _ring_and_leibniz(cases=1000):
    rng = np.random.default_rng(9)
    for _ in range(cases):
        p, q, r = (_random_poly(rng) for _ in range(3))
        if not (p + q == q + p and p * q == q * p and (p * q) * r == p * (q * r)
                and p * (q + r) == p * q + p * r and (p - p).is_zero()):
            return False
        k = int(rng.integers(0, 3))
        if (p * q).diff(k) != p.diff(k) * q + p * q.diff(k):
            return False
    return True


def _gram_round_trip():
    from sosbound.soscert import ProgramBuilder, SosProgram

    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        basis = monomial_basis(2, 2)
        B = rng.standard_normal((len(basis), len(basis)))
        p = reconstruct(B @ B.T, basis)
        b = ProgramBuilder(2)
        t = b.new_var("t")
        b.add_block(basis)
        prog = SosProgram(nvars=2, names=b.names, var_names=b.var_names,
                          certified=LinearPolyExpr(p, {t: Polynomial.constant(1.0, 2)}), blocks=b.blocks,
                          block_weights=b.block_weights, objective_var=t)
        prob, rec = prog.to_sdp()
        sol = sdpcore.solve(prob)
        u = rec.decision_values(prob, sol.X)
        grams = [prog.gram_matrix(k, Y) for k, Y in enumerate(sol.X)]
        worst = max(worst, boundengine.certificate_residual(prog, u, grams))
    return worst


def _rk4_ratios():
    x, y = Polynomial.variables(2)
    osc = dynsys.DynSystem(("x", "y"), (y, -x))
    errs = [abs(simulate.integrate(osc, [1.0, 0.0], 2.0, h).x[-1, 0] - math.cos(2.0)) for h in (0.1, 0.05, 0.025)]
    return errs[0] / errs[1], errs[1] / errs[2]


def _lie_average():
    sysm = dynsys.duffing(omega=1.2)
    x, y, z1, _ = sysm.vars()
    V = x * x + y * y + x * y * z1
    g = lie_derivative(V, sysm.field)
    x0 = np.array([0.5, 0.0, 0.0, 1.0])
    out = []
    for T in (100.0, 400.0, 1600.0):
        out.append(T * abs(simulate.time_average(sysm, g, x0, 0.0, T, 1e-2).value))
    return out


def criterion_9():
    t0 = time.perf_counter()
    ring = _ring_and_leibniz()
    gram = _gram_round_trip()
    x2 = Polynomial.variable(0, 4) ** 2
    sysm = dynsys.duffing(omega=1.2)
    trace = escalate(BoundQuery(sysm, x2, UPPER, 4, max_degree=8, sharpness_tol=0.0)).escalation_trace
    vals = [v for _, v in trace]
    monotone = all(math.isfinite(v) for v in vals) and all(b <= a + 1e-6 * max(1.0, abs(a))
                                                          for a, b in zip(vals, vals[1:]))
    lo, up = boundengine.bound_pair(sysm, x2, 6)
    ordered = lo.reliable and up.reliable and up.bound >= lo.bound - 1e-6
    xc = Polynomial.variable(0, 1)
    base = bound(BoundQuery(dynsys.cubic1d(), xc * xc, UPPER, 2)).bound
    shifted = bound(BoundQuery(dynsys.cubic1d(), xc * xc + 5.0, UPPER, 2)).bound
    shift_err = abs(shifted - base - 5.0)
    ratios = _rk4_ratios()
    lie = _lie_average()
    dt = time.perf_counter() - t0
    ok = (ring and gram < 1e-8 and monotone and ordered and shift_err <= 1e-8
          and all(14.0 < r < 18.0 for r in ratios) and max(lie) < 100.0 and dt < 120)
    return ok, (f"ring+leibniz={ring} gram_residual={gram:.1e} escalation={[round(v, 6) for v in vals]} "
                f"upper>=lower={ordered} shift_err={shift_err:.1e} rk4_ratios={[round(r, 2) for r in ratios]} "
                f"T*|lie_avg|={[round(v, 3) for v in lie]} time={dt:.0f}s")


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 10)}


def report(k):
    ok, detail = CRITERIA[k]()
    return ok, f"CRITERION {k} {'PASS' if ok else 'FAIL'} {detail}"


@pytest.mark.parametrize("k", range(1, 10))
def test_criterion(k, capsys):
    ok, line = report(k)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    which = [int(a) for a in sys.argv[1:]] or list(CRITERIA)
    results = [report(k) for k in which]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
