import math

import numpy as np
import pytest

from sosbound import boundengine
from sosbound.boundengine import LOWER, UPPER, BoundQuery, bound, escalate, identity_residual
from sosbound.dynsys import DynSystem, SemialgebraicSet, cubic1d, duffing
from sosbound.polyring import Polynomial
from sosbound.sdpcore import SolverStatus


def x2(n=1):
    return Polynomial.variable(0, n) ** 2


def test_cubic_golden():
    res = bound(BoundQuery(cubic1d(), x2(), v_degree=2))
    assert res.status is SolverStatus.OPTIMAL
    assert abs(res.bound - 1.0) < 1e-5
    assert abs(res.V.coeff((2,)) - 0.5) < 1e-4
    assert identity_residual(res, cubic1d(), x2()) < 1e-7


def test_cubic_lower_bound_is_zero():
    res = bound(BoundQuery(cubic1d(), x2(), LOWER, v_degree=2))
    assert abs(res.bound) < 1e-5


@pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
def test_constant_shift_equivariance(c):
    base = bound(BoundQuery(cubic1d(), x2(), v_degree=4)).bound
    shifted = bound(BoundQuery(cubic1d(), x2() + c, v_degree=4)).bound
    assert abs(shifted - (base + c)) < 1e-6


def test_upper_dominates_lower_duffing():
    sysm = duffing(omega=1.2)
    lo, up = boundengine.bound_pair(sysm, x2(4), 4)
    assert lo.reliable and up.reliable
    assert up.bound >= lo.bound - 1e-7
    for res in (lo, up):
        assert identity_residual(res, sysm, x2(4)) < 1e-5
        assert res.certificate_residual < 1e-6


def test_monotone_escalation():
    sysm = duffing(omega=1.2)
    q = BoundQuery(sysm, x2(4), v_degree=4, max_degree=8, sharpness_tol=0.0)
    res = escalate(q)
    values = [v for _, v in res.escalation_trace if math.isfinite(v)]
    assert len(values) >= 2
    assert all(b <= a + 1e-6 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def test_inequality_constrained_bound():
    # x' = -x on [-1, 2]: every trajectory decays to 0, so the upper bound on x is 0
    x = Polynomial.variable(0, 1)
    sysm = DynSystem(("x",), (-x,), SemialgebraicSet(inequalities=((x + 1.0) * (2.0 - x),)))
    res = bound(BoundQuery(sysm, x, v_degree=2))
    assert res.reliable and abs(res.bound) < 1e-5
    assert identity_residual(res, sysm, x) < 1e-6


def test_reliability_flag():
    res = bound(BoundQuery(cubic1d(), x2(), v_degree=2))
    assert res.reliable and res.value == res.bound
    res.status = SolverStatus.PRIMAL_INFEASIBLE
    assert not res.reliable and math.isnan(res.value)
    res.status = SolverStatus.MAX_ITERATIONS
    assert res.reliable == (res.sdp.rel_gap <= boundengine.RELIABLE_TOL)


def test_record_format():
    res = bound(BoundQuery(cubic1d(), x2(), v_degree=2))
    line = res.record(["x"], with_v=True).splitlines()
    assert line[0].startswith("direction=upper degree=2 U=1.0000")
    assert line[1].startswith("V=")


def test_query_validation():
    with pytest.raises(ValueError):
        BoundQuery(cubic1d(), x2(), "sideways")
    with pytest.raises(ValueError):
        BoundQuery(cubic1d(), x2(2))
    with pytest.raises(ValueError):
        BoundQuery(cubic1d(), x2(), v_degree=0)
    with pytest.raises(ValueError):
        BoundQuery(cubic1d(), x2(), scale=[-1.0])


def test_scaling_does_not_change_the_bound():
    sysm = duffing(omega=1.2)
    a = bound(BoundQuery(sysm, x2(4), v_degree=4, scale=None)).bound
    b = bound(BoundQuery(sysm, x2(4), v_degree=4, scale="auto")).bound
    assert abs(a - b) < 1e-4 * max(1.0, abs(a))


def test_localization_values_touch_bound():
    res = bound(BoundQuery(cubic1d(), x2(), v_degree=2))
    vals = boundengine.localization_values(res, cubic1d(), x2(), np.array([[1.0], [-1.0], [0.5]]))
    assert np.all(vals <= res.bound + 1e-6)
    assert abs(vals[0] - res.bound) < 1e-4
