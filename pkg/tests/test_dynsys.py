import math

import numpy as np
import pytest

from sosbound import dynsys, simulate
from sosbound.dynsys import (DynSystem, SemialgebraicSet, autonomize_periodic, duffing, duffing_forced,
                             forcing_initial_state, lift_trig_state, pendulum, pendulum_direct_rhs,
                             pendulum_lifted_state, pendulum_trig, project_to_constraints, taylor_sin)
from sosbound.polyring import DimensionError, Polynomial, lie_derivative

DT = 1e-3


def fidelity_duffing(omega=1.2, x0=(0.5, -0.2), t_end=130.0, t_skip=30.0):
    forced = duffing_forced(0.1, 1.0, 0.04, 1.0, omega)
    lifted = autonomize_periodic(forced)
    state = np.concatenate([x0, forcing_initial_state(1.0)])
    a = simulate.integrate(lifted, state, t_end, DT)
    b = simulate.integrate_nonautonomous(forced.rhs(), np.array(x0), t_end, DT)
    keep = a.t >= t_skip
    return float(np.max(np.abs(a.x[keep, 0] - b.x[keep, 0])))


def fidelity_pendulum(omega=1.0, theta0=0.3, phi0=0.0, F=0.1, t_end=130.0, t_skip=30.0):
    lifted = pendulum(0.1, F, omega)
    a = simulate.integrate(lifted, pendulum_lifted_state(theta0, phi0, F), t_end, DT)
    b = simulate.integrate_nonautonomous(pendulum_direct_rhs(0.1, F, omega), np.array([theta0, phi0]), t_end, DT)
    keep = a.t >= t_skip
    ea = 0.5 * a.x[keep, 0] ** 2 - a.x[keep, 2]
    eb = 0.5 * b.x[keep, 1] ** 2 - np.cos(b.x[keep, 0])
    return float(np.max(np.abs(ea - eb)))


def test_duffing_transform_fidelity():
    assert fidelity_duffing() < 1e-6


def test_pendulum_transform_fidelity():
    assert fidelity_pendulum() < 1e-6


def test_duffing_lift_structure():
    sysm = duffing(omega=1.2)
    assert sysm.var_names == ("x", "y", "z1", "z2")
    x, y, z1, z2 = sysm.vars()
    assert sysm.field[1] == -0.1 * y - x - 0.04 * x ** 3 + z2
    assert sysm.constraint_set.equalities == (1.0 - z1 * z1 - z2 * z2,)
    # the rotator circle is invariant
    assert lie_derivative(z1 * z1 + z2 * z2, sysm.field).is_zero()


def test_pendulum_lift_structure():
    sysm = pendulum(0.1, 0.2, 0.9)
    phi, psi1, psi2, z1, z2 = sysm.vars()
    assert sysm.field[0] == -0.1 * phi - psi1 + 0.2 * z1
    for h in sysm.constraint_set.equalities:
        assert lie_derivative(h, sysm.field).is_zero()
    x0 = pendulum_lifted_state(1.0, 0.5, 0.2)
    assert sysm.constraint_set.contains(x0, 1e-12)


def test_stabilized_rotator_attracts():
    forced = duffing_forced(0.1, 1.0, 0.04, 1.0, 1.2)
    sysm = autonomize_periodic(forced, stabilize=True)
    assert sysm.constraint_set.is_empty_description()
    traj = simulate.integrate(sysm, [0.0, 0.0, 0.3, 0.1], 30.0, 1e-2)
    assert abs(np.hypot(traj.x[-1, 2], traj.x[-1, 3]) - 1.0) < 1e-6


def test_trig_lift_replaces_sine():
    lifted = lift_trig_state(pendulum_trig(0.1), names=("s", "c"))
    assert lifted.var_names == ("phi", "s", "c")
    assert len(lifted.constraint_set.equalities) == 1


def test_taylor_sin():
    p = taylor_sin(7)
    for t in (0.1, 0.5, 1.0):
        assert abs(p.evaluate([t]) - math.sin(t)) < t ** 9 / math.factorial(9) * 1.01


def test_project_to_constraints():
    sysm = pendulum()
    x = project_to_constraints(sysm, [0.1, 0.5, 0.5, 2.0, 0.0])
    assert sysm.constraint_set.contains(x, 1e-12)


def test_validation():
    x = Polynomial.variable(0, 1)
    with pytest.raises(DimensionError):
        DynSystem(("x", "y"), (x,))
    with pytest.raises(ValueError):
        DynSystem(("x", "x"), (Polynomial.zero(2), Polynomial.zero(2)))
    with pytest.raises(ValueError):
        autonomize_periodic(dynsys.ForcedSystem(DynSystem(("x",), (x,)), 1.0, 0.0))
    with pytest.raises(KeyError):
        dynsys.preset("lorenz")
    assert dynsys.preset("cubic1d") == dynsys.cubic1d()
    assert SemialgebraicSet() == SemialgebraicSet()
