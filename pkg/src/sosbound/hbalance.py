"""Single-harmonic balance for the forced Duffing oscillator and pendulum.

With ``x = A cos wt + B sin wt`` and ``R^2 = A^2 + B^2`` the projected
equations reduce to one implicit relation between ``R`` and ``w``.  For
Duffing it is a cubic in ``u = R^2``; for the pendulum (sine expanded to 7th
order) it is of degree 4 in ``u``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

ROOT_MERGE = 1e-8
#: scan interval for the pendulum relation is ``u in [0, 1.2 pi^2]``
PENDULUM_U_MAX = 1.2 * math.pi ** 2
PENDULUM_SCAN = 4000
SIMPSON_POINTS = 1024


class Regime(str, enum.Enum):
    SINGLE = "SingleValued"
    MULTI = "MultiValued"


@dataclass
class FrequencyResponsePoint:
    omega: float
    amplitudes: List[float]
    regime: Regime
    residuals: List[float] = field(default_factory=list)
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if any(a < 0 for a in self.amplitudes):
            raise ValueError("amplitudes must be non-negative")


def _regime(count: int) -> Regime:
    return Regime.MULTI if count >= 3 else Regime.SINGLE


def _merge(us: Sequence[float]) -> List[float]:
    out: List[float] = []
    for u in sorted(us):
        if not out or u - out[-1] > ROOT_MERGE * max(1.0, abs(u)):
            out.append(u)
    return out


# Duffing -------------------------------------------------------------------

def duffing_cubic(delta: float, alpha: float, beta: float, F: float, omega: float) -> np.ndarray:
    """Coefficients (highest first) of ``[(w^2 - alpha - 3 beta u / 4)^2 + (delta w)^2] u - F^2``."""
    k = omega * omega - alpha
    c = 0.75 * beta
    return np.array([c * c, -2.0 * k * c, k * k + (delta * omega) ** 2, -F * F])


def duffing_residual(delta: float, alpha: float, beta: float, F: float, omega: float, R: float) -> float:
    u = R * R
    return ((omega * omega - alpha - 0.75 * beta * u) ** 2 + (delta * omega) ** 2) * u - F * F


def _newton_polish(coeffs: np.ndarray, u: float, steps: int = 6) -> float:
    d = np.polyder(coeffs)
    for _ in range(steps):
        fu = np.polyval(coeffs, u)
        du = np.polyval(d, u)
        if du == 0 or not np.isfinite(fu):
            break
        nu = u - fu / du
        if not np.isfinite(nu) or abs(nu - u) <= 1e-16 * max(1.0, abs(u)):
            u = nu if np.isfinite(nu) else u
            break
        u = nu
    return u


def duffing_response(delta: float, alpha: float, beta: float, F: float, omega: float) -> FrequencyResponsePoint:
    """All non-negative amplitude roots of the Duffing frequency-response relation, ascending."""
    if F < 0:
        F = -F
    if not delta > 0 or not omega > 0:
        raise ValueError("need delta > 0 and omega > 0")
    params = {"model": "duffing", "delta": delta, "alpha": alpha, "beta": beta, "F": F}
    if F == 0:
        return FrequencyResponsePoint(omega, [0.0], Regime.SINGLE, [0.0], params)
    coeffs = duffing_cubic(delta, alpha, beta, F, omega)
    if beta == 0:
        us = [F * F / coeffs[2]]
    else:
        raw = np.roots(coeffs)
        scale = max(1.0, float(np.max(np.abs(raw))))
        us = [_newton_polish(coeffs, float(r.real)) for r in raw if abs(r.imag) <= 1e-7 * scale]
        us = [u for u in us if u >= 0]
    us = _merge(us)
    amps = [math.sqrt(u) for u in us]
    res = [abs(duffing_residual(delta, alpha, beta, F, omega, R)) for R in amps]
    return FrequencyResponsePoint(omega, amps, _regime(len(amps)), res, params)


def cubic_discriminant(coeffs: Sequence[float]) -> float:
    a, b, c, d = coeffs
    return 18 * a * b * c * d - 4 * b ** 3 * d + b * b * c * c - 4 * a * c ** 3 - 27 * a * a * d * d


def duffing_discriminant(delta: float, alpha: float, beta: float, F: float, omega: float) -> float:
    """Positive exactly where the response has three distinct amplitudes."""
    return cubic_discriminant(duffing_cubic(delta, alpha, beta, F, omega))


def multivalued_windows(delta: float, alpha: float, beta: float, F: float, omega_min: float = 0.2,
                        omega_max: float = 2.0, n: int = 2000) -> List[Tuple[float, float]]:
    """Frequency intervals with three real amplitudes, located by a discriminant sign-change scan."""
    disc = lambda w: duffing_discriminant(delta, alpha, beta, F, w)  # noqa: E731
    ws = np.linspace(omega_min, omega_max, n)
    vals = np.array([disc(w) for w in ws])
    edges: List[float] = []
    for k in range(n - 1):
        if (vals[k] > 0) != (vals[k + 1] > 0):
            edges.append(brentq(disc, ws[k], ws[k + 1], xtol=1e-14))
    bounds = ([omega_min] if vals[0] > 0 else []) + edges + ([omega_max] if vals[-1] > 0 else [])
    return [(bounds[i], bounds[i + 1]) for i in range(0, len(bounds) - 1, 2)]


def duffing_mean_square(point: FrequencyResponsePoint) -> List[float]:
    """Period average of ``x^2`` under the ansatz, ``R^2 / 2`` per root."""
    return [0.5 * R * R for R in point.amplitudes]


# pendulum ------------------------------------------------------------------

def pendulum_relation(u: float, gamma: float, F: float, omega: float, about_pi: bool = False) -> float:
    """Implicit 7th-order pendulum relation in ``u = R^2``.

    The standard form is used literally.  Expanding about the inverted state
    flips the sign of the restoring projection, which flips the sign of the
    ``-9216``-normalized polynomial inside the cross term.
    """
    p = u ** 3 + 1152.0 * u - 48.0 * u * u - 9216.0
    w2 = omega * omega
    if not about_pi:
        return (u * p * p / 84934656.0 + u * w2 * w2
                + u * (u ** 3 + 4608.0 * (gamma * gamma - 2.0) + 1152.0 * u - 48.0 * u * u) * w2 / 4608.0
                - F * F)
    return u * p * p / 84934656.0 + u * w2 * w2 + u * (gamma * gamma * w2 - 2.0 * w2 * p / 9216.0) - F * F


def restoring_projection(u: float, about_pi: bool = False) -> float:
    """Cos-projection of the 7th-order sine divided by ``R`` (negated about pi)."""
    c = 1.0 - u / 8.0 + u * u / 192.0 - u ** 3 / 9216.0
    return -c if about_pi else c


def pendulum_response(gamma: float, F: float, omega: float, about_pi: bool = False,
                      u_max: float = PENDULUM_U_MAX, scan: int = PENDULUM_SCAN) -> FrequencyResponsePoint:
    """Amplitude roots in ``[0, sqrt(u_max)]`` by scanning for sign changes and bisecting."""
    if F < 0:
        F = -F
    if not gamma > 0 or not omega > 0:
        raise ValueError("need gamma > 0 and omega > 0")
    params = {"model": "pendulum", "gamma": gamma, "F": F, "about_pi": about_pi}
    if F == 0:
        return FrequencyResponsePoint(omega, [0.0], Regime.SINGLE, [0.0], params)
    g = lambda u: pendulum_relation(u, gamma, F, omega, about_pi)  # noqa: E731
    us = np.linspace(0.0, u_max, scan + 1)
    vals = np.array([g(u) for u in us])
    roots = []
    for k in range(scan):
        if vals[k] == 0.0:
            roots.append(us[k])
        elif vals[k] * vals[k + 1] < 0:
            roots.append(brentq(g, us[k], us[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    roots = _merge(roots)
    amps = [math.sqrt(u) for u in roots]
    res = [abs(g(u)) for u in roots]
    return FrequencyResponsePoint(omega, amps, _regime(len(amps)), res, params)


def _cos_average(R: float, n: int = SIMPSON_POINTS) -> float:
    """Mean of ``cos(R cos psi)`` over one period by composite Simpson."""
    psi = np.linspace(0.0, 2.0 * math.pi, n + 1)
    vals = np.cos(R * np.cos(psi))
    h = 2.0 * math.pi / n
    total = vals[0] + vals[-1] + 4.0 * vals[1:-1:2].sum() + 2.0 * vals[2:-1:2].sum()
    return total * h / 3.0 / (2.0 * math.pi)


def hb_mean_energy(point: FrequencyResponsePoint, about_pi: Optional[bool] = None) -> List[float]:
    """Period average of ``theta'^2/2 - cos theta`` for each amplitude root.

    About pi the ansatz describes ``pi - theta``, so the potential average
    changes sign.
    """
    if about_pi is None:
        about_pi = bool(point.params.get("about_pi", False))
    w = point.omega
    sign = 1.0 if about_pi else -1.0
    return [0.25 * w * w * R * R + sign * _cos_average(R) for R in point.amplitudes]


# sweeps --------------------------------------------------------------------

@dataclass
class BranchRow:
    omega: float
    branch_id: int
    R: float
    regime: Regime
    mean_energy: float = math.nan


@dataclass
class ResponseSweep:
    points: List[FrequencyResponsePoint]
    rows: List[BranchRow]
    folds: List[Tuple[float, int, str]]

    def branch(self, branch_id: int) -> Tuple[np.ndarray, np.ndarray]:
        sel = [(r.omega, r.R) for r in self.rows if r.branch_id == branch_id]
        arr = np.array(sel).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]

    @property
    def branch_ids(self) -> List[int]:
        return sorted({r.branch_id for r in self.rows})


def sweep(response: Callable[[float], FrequencyResponsePoint], omegas: Sequence[float],
          energy: Optional[Callable[[FrequencyResponsePoint], List[float]]] = None) -> ResponseSweep:
    """Evaluate ``response`` on ``omegas`` and continue branches by nearest neighbour.

    Roots left unmatched open a branch and branches left unmatched close;
    both are logged as folds ``(omega, branch_id, 'birth' | 'death')``.
    """
    points: List[FrequencyResponsePoint] = []
    rows: List[BranchRow] = []
    folds: List[Tuple[float, int, str]] = []
    live: Dict[int, float] = {}
    next_id = 0
    for w in omegas:
        pt = response(float(w))
        points.append(pt)
        es = energy(pt) if energy is not None else [math.nan] * len(pt.amplitudes)
        pairs = sorted(((abs(R - last), i, bid) for i, R in enumerate(pt.amplitudes) for bid, last in live.items()))
        used_roots, used_branches, assign = set(), set(), {}
        for _, i, bid in pairs:
            if i in used_roots or bid in used_branches:
                continue
            assign[i] = bid
            used_roots.add(i)
            used_branches.add(bid)
        for bid in list(live):
            if bid not in used_branches:
                folds.append((float(w), bid, "death"))
                del live[bid]
        for i, R in enumerate(pt.amplitudes):
            if i not in assign:
                assign[i] = next_id
                if points[:-1]:
                    folds.append((float(w), next_id, "birth"))
                next_id += 1
            live[assign[i]] = R
            rows.append(BranchRow(float(w), assign[i], R, pt.regime, es[i]))
    return ResponseSweep(points, rows, folds)


def tilt_direction(result: ResponseSweep) -> int:
    """+1 if the resonance peak leans right (towards larger w), -1 if it leans left.

    Uses the envelope ``max R`` per frequency: ``dR/dw > 0`` holds over the
    longer flank of a right-leaning peak, so the lean is the sign of
    ``(w_peak - w_lo) - (w_hi - w_peak)`` with ``w_lo, w_hi`` the half-maximum
    crossings around the peak.
    """
    ws = np.array([p.omega for p in result.points])
    env = np.array([max(p.amplitudes) if p.amplitudes else 0.0 for p in result.points])
    k = int(np.argmax(env))
    half = 0.5 * (env[k] + env.min())
    lo = k
    while lo > 0 and env[lo - 1] > half:
        lo -= 1
    hi = k
    while hi < ws.size - 1 and env[hi + 1] > half:
        hi += 1
    return int(np.sign((ws[k] - ws[lo]) - (ws[hi] - ws[k])))


def duffing_sweep(delta: float, alpha: float, beta: float, F: float, omegas: Sequence[float]) -> ResponseSweep:
    return sweep(lambda w: duffing_response(delta, alpha, beta, F, w), omegas,
                 energy=duffing_mean_square)


def pendulum_sweep(gamma: float, F: float, omegas: Sequence[float], about_pi: bool = False) -> ResponseSweep:
    return sweep(lambda w: pendulum_response(gamma, F, w, about_pi), omegas,
                 energy=lambda pt: hb_mean_energy(pt, about_pi))
