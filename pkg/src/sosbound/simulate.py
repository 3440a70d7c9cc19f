"""Fixed-step RK4 integration and finite-horizon time averages.

Used as an empirical check on every bound: a time average along any bounded
trajectory has to land inside ``[lower, upper]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .dynsys import DynSystem, project_to_constraints
from .polyring import Polynomial

DIVERGENCE_NORM = 1e8
DEFAULT_DT = 1e-3
DEFAULT_TRANSIENT = 100.0
DEFAULT_WINDOW = 400.0


class Divergence(RuntimeError):
    """The state norm exceeded the escape threshold."""

    def __init__(self, escape_time: float, message: str = ""):
        super().__init__(message or f"trajectory diverged at t={escape_time:.6g}")
        self.escape_time = escape_time


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    names: Tuple[str, ...] = ()

    def to_csv(self, path) -> None:
        names = self.names or tuple(f"x{k}" for k in range(self.x.shape[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + tuple(names))
            for tk, xk in zip(self.t, self.x):
                w.writerow([repr(float(tk))] + [repr(float(v)) for v in xk])


@dataclass
class TrajectoryAverage:
    initial_condition: np.ndarray
    t_transient: float
    t_average: float
    dt: float
    value: float
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.t_average > 0:
            raise ValueError("averaging window must be positive")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not math.isfinite(self.value):
            raise ValueError("time average is not finite")


def _pack(polys: Sequence[Polynomial], nvars: int):
    exps, coeffs, comp = [], [], []
    for k, p in enumerate(polys):
        for m, c in p.items():
            exps.append(m)
            coeffs.append(c)
            comp.append(k)
    e = np.array(exps, dtype=np.int32).reshape(-1, nvars)
    return (np.ascontiguousarray(e), np.array(coeffs, dtype=float), np.array(comp, dtype=np.int32),
            int(e.max()) if e.size else 0)


def _steps(t: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("time step must be positive")
    if t < 0:
        raise ValueError("integration time must be non-negative")
    return int(round(t / dt))


def _run(sys: DynSystem, phi: Optional[Polynomial], states: np.ndarray, dt: float, n_skip: int, n_avg: int,
         record: bool = False):
    d = sys.dim
    exps, coeffs, comp, fdeg = _pack(sys.field, d)
    if phi is None:
        pe, pc, pdeg = np.zeros((0, d), dtype=np.int32), np.zeros(0), 0
    else:
        pe, pc, _, pdeg = _pack([phi], d)
    state = np.ascontiguousarray(np.atleast_2d(np.asarray(states, dtype=float)).copy())
    if state.shape[1] != d:
        raise ValueError(f"initial condition has {state.shape[1]} entries, system has {d}")
    traj = np.zeros((n_skip + n_avg + 1 if record else 0, d))
    avg, esc = kernels.rk4_run(exps, coeffs, comp, max(fdeg, pdeg), pe, pc, state, float(dt),
                               int(n_skip), int(n_avg), DIVERGENCE_NORM, traj)
    return np.asarray(avg), np.asarray(esc), state, traj


def integrate(sys: DynSystem, x0, t_end: float, dt: float = DEFAULT_DT) -> Trajectory:
    """Classical RK4 from ``x0`` to ``t_end`` with output at every step."""
    n = _steps(t_end, dt)
    _, esc, _, traj = _run(sys, None, np.asarray(x0, dtype=float)[None, :], dt, n, 0, record=True)
    if esc[0] >= 0:
        raise Divergence(esc[0] * dt)
    return Trajectory(np.arange(n + 1) * dt, traj, tuple(sys.var_names))


def forcing_period(sys: DynSystem) -> Optional[float]:
    """``2 pi / omega`` for systems lifted from periodic forcing, else None."""
    w = sys.metadata.get("omega")
    if "forcing_vars" not in sys.metadata or not isinstance(w, (int, float)) or not w > 0:
        return None
    return 2.0 * math.pi / float(w)


def whole_period_window(sys: DynSystem, t_average: float) -> float:
    """``t_average`` rounded to a whole number (at least one) of forcing periods.

    Averaging a periodic response over a partial period leaves an error of
    order ``1/t_average`` that depends on the phase; whole periods remove it.
    """
    period = forcing_period(sys)
    if period is None:
        return t_average
    return period * max(1, round(t_average / period))


def time_averages(sys: DynSystem, phi: Polynomial, x0s, t_transient: float = DEFAULT_TRANSIENT,
                  t_average: float = DEFAULT_WINDOW, dt: float = DEFAULT_DT,
                  whole_periods: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Trapezoidal averages for a batch of initial conditions.

    Returns ``(values, escape_times)``; escape time is NaN for bounded runs and
    the value is NaN for diverged ones.  With ``whole_periods`` the window is
    rounded to whole forcing periods (see :func:`whole_period_window`).
    """
    if phi.nvars != sys.dim:
        raise ValueError("observable and system have different numbers of variables")
    if whole_periods:
        t_average = whole_period_window(sys, t_average)
    n_skip, n_avg = _steps(t_transient, dt), _steps(t_average, dt)
    if n_avg <= 0:
        raise ValueError("averaging window must be positive")
    avg, esc, _, _ = _run(sys, phi, x0s, dt, n_skip, n_avg)
    values = avg.astype(float)
    escape = np.where(esc >= 0, esc * dt, np.nan)
    values[esc >= 0] = np.nan
    return values, escape


def time_average(sys: DynSystem, phi: Polynomial, x0, t_transient: float = DEFAULT_TRANSIENT,
                 t_average: float = DEFAULT_WINDOW, dt: float = DEFAULT_DT,
                 whole_periods: bool = False) -> TrajectoryAverage:
    x0 = np.asarray(x0, dtype=float)
    if whole_periods:
        t_average = whole_period_window(sys, t_average)
    values, escape = time_averages(sys, phi, x0[None, :], t_transient, t_average, dt)
    if not math.isnan(escape[0]):
        raise Divergence(float(escape[0]))
    return TrajectoryAverage(x0, t_transient, t_average, dt, float(values[0]))


def random_initial_conditions(sys: DynSystem, count: int, box=1.0, seed: int = 0) -> np.ndarray:
    """Uniform samples from ``[-box, box]`` (per variable if a vector) moved onto the equalities."""
    rng = np.random.default_rng(seed)
    half = np.broadcast_to(np.asarray(box, dtype=float), (sys.dim,))
    pts = rng.uniform(-half, half, size=(count, sys.dim))
    return np.array([project_to_constraints(sys, p) for p in pts])


@dataclass
class EnsembleAverage:
    values: np.ndarray
    escape_times: np.ndarray
    initial_conditions: np.ndarray
    seed: int
    t_transient: float
    t_average: float
    dt: float

    @property
    def bounded(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]


def ensemble_average(sys: DynSystem, phi: Polynomial, count: int, box=1.0, seed: int = 0,
                     t_transient: float = DEFAULT_TRANSIENT, t_average: float = DEFAULT_WINDOW,
                     dt: float = DEFAULT_DT, whole_periods: bool = False) -> EnsembleAverage:
    x0s = random_initial_conditions(sys, count, box, seed)
    if whole_periods:
        t_average = whole_period_window(sys, t_average)
    values, escape = time_averages(sys, phi, x0s, t_transient, t_average, dt)
    return EnsembleAverage(values, escape, x0s, seed, t_transient, t_average, dt)


def rms_scale(sys: DynSystem, count: int = 8, seed: int = 0, boxes: Sequence[float] = (1.0, 10.0),
              t_transient: float = 100.0, t_average: float = 100.0, dt: float = 1e-2,
              floor: float = 1e-3) -> Optional[np.ndarray]:
    """Per-variable amplitude ``sqrt(2) * rms``, maximized over a short ensemble.

    Initial conditions come from nested boxes so that large attractors are
    found next to small ones.  Returns None if no run stays bounded.
    """
    n = sys.dim
    x0s = np.vstack([random_initial_conditions(sys, count, box, seed + k) for k, box in enumerate(boxes)])
    phis = [Polynomial.variable(k, n) ** 2 for k in range(n)]
    vals = np.empty((n, x0s.shape[0]))
    for k, phi in enumerate(phis):
        vals[k], _ = time_averages(sys, phi, x0s, t_transient, t_average, dt)
    ok = np.all(np.isfinite(vals), axis=0)
    if not ok.any():
        return None
    return np.maximum(np.sqrt(2.0 * vals[:, ok].max(axis=1)), floor)


def integrate_nonautonomous(f: Callable[[float, np.ndarray], np.ndarray], x0, t_end: float,
                            dt: float = DEFAULT_DT, t0: float = 0.0) -> Trajectory:
    """RK4 for ``x' = f(t, x)`` given as a Python callable (slow; for cross-checks)."""
    n = _steps(t_end - t0, dt)
    x = np.array(x0, dtype=float)
    out = np.empty((n + 1, x.size))
    out[0] = x
    t = t0
    for s in range(n):
        k1 = f(t, x)
        k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = f(t + dt, x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.linalg.norm(x) <= DIVERGENCE_NORM:
            raise Divergence(t + dt)
        out[s + 1] = x
        t = t0 + (s + 1) * dt
    return Trajectory(t0 + np.arange(n + 1) * dt, out)


def trajectory_average(traj: Trajectory, values: np.ndarray, t_transient: float) -> float:
    """Trapezoidal mean of sampled ``values`` over ``t >= t_transient``."""
    keep = traj.t >= t_transient - 1e-12
    t, v = traj.t[keep], np.asarray(values)[keep]
    if t.size < 2:
        raise ValueError("averaging window must contain at least two samples")
    return float(np.trapezoid(v, t) / (t[-1] - t[0]))
