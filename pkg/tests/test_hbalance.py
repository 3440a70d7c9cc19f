import math

import numpy as np
import pytest
import sympy as sp

from sosbound import hbalance
from sosbound.hbalance import (Regime, duffing_discriminant, duffing_response, duffing_sweep, hb_mean_energy,
                               multivalued_windows, pendulum_relation, pendulum_response, pendulum_sweep,
                               tilt_direction)

DUFFING = dict(delta=0.1, alpha=1.0, beta=0.04, F=1.0)
# edges of the three-root window, from an independent discriminant root-find
WINDOW = (1.2515913329280184, 1.5184254649366533)


@pytest.fixture(scope="module")
def rederived_pendulum():
    """Harmonic balance of the 7th-order sine redone symbolically, alongside the closed form it must equal."""
    R, w, g, F, t = sp.symbols("R omega gamma F t", positive=True)
    th = R * sp.cos(t)
    s7 = sum((-1) ** k * th ** (2 * k + 1) / sp.factorial(2 * k + 1) for k in range(4))
    c1 = sp.simplify(sp.integrate(sp.expand(s7) * sp.cos(t), (t, 0, 2 * sp.pi)) / sp.pi)
    c = sp.expand(c1 / R)
    derived = ((w ** 2 - c) ** 2 + (g * w) ** 2) * R ** 2 - F ** 2
    closed = (R ** 2 * (R ** 6 + 1152 * R ** 2 - 48 * R ** 4 - 9216) ** 2 / 84934656 + R ** 2 * w ** 4
              + R ** 2 * (R ** 6 + 4608 * (g ** 2 - 2) + 1152 * R ** 2 - 48 * R ** 4) * w ** 2 / 4608 - F ** 2)
    return (R, w, g, F), derived, closed


def test_pendulum_relation_coefficients(rederived_pendulum):
    (R, w, g, F), derived, closed = rederived_pendulum
    assert sp.expand(derived - closed) == 0
    f = sp.lambdify((R, w, g, F), derived)
    rng = np.random.default_rng(0)
    for _ in range(50):
        r, om, ga, fo = rng.uniform(0.05, 3.0), rng.uniform(0.3, 2.0), rng.uniform(0.01, 0.5), rng.uniform(0, 0.5)
        ref = f(r, om, ga, fo)
        assert abs(pendulum_relation(r * r, ga, fo, om) - ref) <= 1e-10 * max(1.0, abs(ref))


@pytest.mark.parametrize("omega", np.linspace(0.2, 2.0, 37))
def test_duffing_root_residuals(omega):
    pt = duffing_response(omega=omega, **DUFFING)
    assert all(r < 1e-10 for r in pt.residuals)
    assert pt.regime is (Regime.MULTI if len(pt.amplitudes) == 3 else Regime.SINGLE)


@pytest.mark.parametrize("omega", [0.6, 0.9, 1.0, 1.1])
def test_pendulum_root_residuals(omega):
    pt = pendulum_response(0.1, 0.1, omega)
    assert pt.amplitudes
    assert all(r < 1e-10 for r in pt.residuals)


def test_linear_resonance():
    pt = duffing_response(0.1, 1.0, 0.0, 1.0, 1.0)
    assert pt.amplitudes == pytest.approx([1.0 / (0.1 * 1.0)], abs=1e-9)


def test_multivalued_window_from_discriminant():
    (lo, hi), = multivalued_windows(**DUFFING)
    assert lo == pytest.approx(WINDOW[0], abs=1e-9)
    assert hi == pytest.approx(WINDOW[1], abs=1e-9)
    for w in np.linspace(0.2, 2.0, 91):
        n = len(duffing_response(omega=w, **DUFFING).amplitudes)
        assert (n == 3) == (duffing_discriminant(omega=w, **DUFFING) > 0)


def envelope_slopes(sweep):
    ws = np.array([p.omega for p in sweep.points])
    env = np.array([max(p.amplitudes) for p in sweep.points])
    k = int(np.argmax(env))
    left = (env[k] - env[k - 1]) / (ws[k] - ws[k - 1]) if k > 0 else math.nan
    right = (env[k + 1] - env[k]) / (ws[k + 1] - ws[k]) if k < ws.size - 1 else math.nan
    return left, right, env[k] - env[min(k + 1, ws.size - 1)], env[k] - env[max(k - 1, 0)]


def test_duffing_tilts_right():
    s = duffing_sweep(omegas=np.linspace(0.2, 2.0, 361), **DUFFING)
    assert tilt_direction(s) == 1
    left, _, drop_right, _ = envelope_slopes(s)
    # dR/dw > 0 approaching the peak; the response jumps down past the fold
    assert left > 0 and drop_right > 1.0


@pytest.mark.parametrize("F", [0.1, 0.15, 0.2])
def test_pendulum_tilts_left(F):
    s = pendulum_sweep(0.1, F, np.linspace(0.5, 1.5, 201))
    assert tilt_direction(s) == -1
    _, right, _, _ = envelope_slopes(s)
    assert right < 0


def test_branch_continuation_records_folds():
    s = duffing_sweep(omegas=np.linspace(1.0, 1.8, 81), **DUFFING)
    assert len(s.branch_ids) >= 3
    kinds = sorted(k for _, _, k in s.folds)
    assert "birth" in kinds and "death" in kinds


def test_mean_energy_small_amplitude_limit():
    pt = pendulum_response(0.1, 1e-4, 0.5)
    # tiny oscillation about the bottom: energy is close to -1
    assert hb_mean_energy(pt)[0] == pytest.approx(-1.0, abs=1e-6)


def test_about_pi_projection_sign():
    assert hbalance.restoring_projection(0.5, True) == -hbalance.restoring_projection(0.5)


def test_validation():
    with pytest.raises(ValueError):
        duffing_response(0.0, 1.0, 0.04, 1.0, 1.0)
    with pytest.raises(ValueError):
        hbalance.FrequencyResponsePoint(1.0, [-1.0], Regime.SINGLE)
