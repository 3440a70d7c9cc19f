"""Polynomial dynamical systems and the transforms that make them polynomial.

Periodic forcing ``F cos(wt + phase)`` is replaced by a rotating pair
``(z1, z2) = (F sin(wt + phase), F cos(wt + phase))`` obeying
``z1' = w z2, z2' = -w z1``.  A single angular state ``theta`` whose field
depends on it only through ``sin theta`` and ``cos theta`` is replaced by
``(s, c) = (sin theta, cos theta)`` with ``s' = Omega c, c' = -Omega s``.
Both lifts either add an attracting cubic term or record the circle as an
equality constraint for the S-procedure.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .polyring import DimensionError, Polynomial


@dataclass(frozen=True, eq=False)
class SemialgebraicSet:
    """``{x : g_i(x) >= 0, h_j(x) = 0}``."""

    inequalities: Tuple[Polynomial, ...] = ()
    equalities: Tuple[Polynomial, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        object.__setattr__(self, "equalities", tuple(self.equalities))
        dims = {p.nvars for p in self.inequalities + self.equalities}
        if len(dims) > 1:
            raise DimensionError("constraint polynomials live in different rings")

    def __eq__(self, other):
        if not isinstance(other, SemialgebraicSet):
            return NotImplemented
        return (Counter(self.inequalities) == Counter(other.inequalities)
                and Counter(self.equalities) == Counter(other.equalities))

    def __hash__(self):
        return hash((frozenset(Counter(self.inequalities).items()),
                     frozenset(Counter(self.equalities).items())))

    def is_empty_description(self) -> bool:
        return not self.inequalities and not self.equalities

    def contains(self, point, tol: float = 1e-9) -> bool:
        return (all(g.evaluate(point) >= -tol for g in self.inequalities)
                and all(abs(h.evaluate(point)) <= tol for h in self.equalities))

    def extended(self, inequalities=(), equalities=()) -> "SemialgebraicSet":
        return SemialgebraicSet(self.inequalities + tuple(inequalities),
                                self.equalities + tuple(equalities))

    def remap(self, index_map: Sequence[int], nvars: int) -> "SemialgebraicSet":
        return SemialgebraicSet(tuple(g.remap(index_map, nvars) for g in self.inequalities),
                                tuple(h.remap(index_map, nvars) for h in self.equalities))


@dataclass(frozen=True)
class DynSystem:
    """Autonomous polynomial ODE ``x' = f(x)`` with an invariant constraint set."""

    var_names: Tuple[str, ...]
    field: Tuple[Polynomial, ...]
    constraint_set: SemialgebraicSet = SemialgebraicSet()
    metadata: Dict[str, object] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "field", tuple(self.field))
        n = len(self.var_names)
        if len(self.field) != n:
            raise DimensionError(f"{len(self.field)} field components for {n} variables")
        if len(set(self.var_names)) != n:
            raise ValueError("duplicate variable names")
        for p in self.field:
            if p.nvars != n:
                raise DimensionError("field component has wrong number of variables")
        for p in self.constraint_set.inequalities + self.constraint_set.equalities:
            if p.nvars != n:
                raise DimensionError("constraint polynomial has wrong number of variables")

    @property
    def dim(self) -> int:
        return len(self.var_names)

    def index(self, name: str) -> int:
        return self.var_names.index(name)

    def var(self, name: str) -> Polynomial:
        return Polynomial.variable(self.index(name), self.dim)

    def vars(self) -> List[Polynomial]:
        return Polynomial.variables(self.dim)

    def rhs(self, x) -> np.ndarray:
        return np.array([f.evaluate(x) for f in self.field])

    def max_field_degree(self) -> int:
        return max((f.degree() for f in self.field), default=0)

    def describe(self) -> str:
        lines = [f"d{v}/dt = {f.to_string(self.var_names)}" for v, f in zip(self.var_names, self.field)]
        lines += [f"{g.to_string(self.var_names)} >= 0" for g in self.constraint_set.inequalities]
        lines += [f"{h.to_string(self.var_names)} = 0" for h in self.constraint_set.equalities]
        return "\n".join(lines)


@dataclass(frozen=True)
class ForcingTerm:
    """Adds ``coefficient * F * cos(wt + phase)`` (or ``sin``) to component ``component``."""

    component: int
    coefficient: float = 1.0
    waveform: str = "cos"

    def __post_init__(self):
        if self.waveform not in ("cos", "sin"):
            raise ValueError(f"waveform must be 'cos' or 'sin', got {self.waveform!r}")
        if not math.isfinite(self.coefficient):
            raise ValueError("forcing coefficient must be finite")


@dataclass(frozen=True)
class ForcedSystem:
    base: DynSystem
    amplitude: float
    omega: float
    forcing: Tuple[ForcingTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "forcing", tuple(self.forcing))
        if not math.isfinite(self.amplitude):
            raise ValueError("forcing amplitude must be finite")
        for term in self.forcing:
            if not 0 <= term.component < self.base.dim:
                raise IndexError(f"forcing component {term.component} out of range")

    def rhs(self, phase: float = 0.0) -> Callable[[float, np.ndarray], np.ndarray]:
        """Right-hand side of the original non-autonomous system."""
        base, F, w = self.base, self.amplitude, self.omega
        terms = self.forcing

        def f(t, x):
            out = base.rhs(x)
            for term in terms:
                wave = math.cos if term.waveform == "cos" else math.sin
                out[term.component] += term.coefficient * F * wave(w * t + phase)
            return out

        return f


def forcing_initial_state(amplitude: float, phase: float = 0.0) -> np.ndarray:
    """Initial ``(z1, z2)`` matching ``F cos(wt + phase)`` at ``t = 0``."""
    return np.array([amplitude * math.sin(phase), amplitude * math.cos(phase)])


def autonomize_periodic(sys: ForcedSystem, stabilize: bool = False,
                        names: Tuple[str, str] = ("z1", "z2"), unit_rotator: bool = False) -> DynSystem:
    """Append the forcing rotator ``(z1, z2)`` and replace the drive by it.

    ``cos`` forcing maps to ``z2`` and ``sin`` forcing to ``z1``; both carry
    amplitude ``F``.  With ``stabilize`` the rotator gets the attracting term
    ``(1 - (z1^2 + z2^2)/F^2) z``; otherwise the circle ``F^2 - z1^2 - z2^2 = 0``
    is added to the equality constraints.  With ``unit_rotator`` the rotator
    lives on the unit circle and ``F`` multiplies the coupling instead.
    """
    if not sys.omega > 0:
        raise ValueError(f"forcing frequency must be positive, got {sys.omega}")
    base = sys.base
    d = base.dim
    n = d + 2
    if any(nm in base.var_names for nm in names):
        raise ValueError(f"lifted variable names {names} collide with system variables")
    embed = list(range(d))
    fields = [f.remap(embed, n) for f in base.field]
    z1 = Polynomial.variable(d, n)
    z2 = Polynomial.variable(d + 1, n)
    F, w = sys.amplitude, sys.omega
    gain = F if unit_rotator else 1.0
    for term in sys.forcing:
        zv = z2 if term.waveform == "cos" else z1
        fields[term.component] = fields[term.component] + zv * (term.coefficient * gain)
    radius = 1.0 if unit_rotator else F
    fz1 = z2 * w
    fz2 = z1 * (-w)
    constraints = base.constraint_set.remap(embed, n)
    if stabilize:
        if radius != 0:
            attract = 1.0 - (z1 * z1 + z2 * z2) * (1.0 / (radius * radius))
            fz1 = fz1 + attract * z1
            fz2 = fz2 + attract * z2
    else:
        constraints = constraints.extended(equalities=[radius * radius - z1 * z1 - z2 * z2])
    meta = dict(base.metadata)
    meta.update({"F": F, "omega": w, "forcing_vars": names, "stabilized_forcing": stabilize,
                 "rotator_radius": radius})
    return DynSystem(tuple(base.var_names) + tuple(names), tuple(fields) + (fz1, fz2), constraints, meta)


@dataclass(frozen=True)
class TrigSystem:
    """System with one angular variable entering only via sin/cos placeholders.

    Field polynomials live in the ring ``var_names + (sin_name, cos_name)``;
    the component at ``angle`` is the angular velocity ``Omega``.
    """

    var_names: Tuple[str, ...]
    angle: int
    field: Tuple[Polynomial, ...]
    constraint_set: SemialgebraicSet = SemialgebraicSet()
    sin_name: str = "sin_theta"
    cos_name: str = "cos_theta"
    metadata: Dict[str, object] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "field", tuple(self.field))
        n = len(self.var_names)
        if len(self.field) != n:
            raise DimensionError("one field component per variable is required")
        for p in self.field + self.constraint_set.inequalities + self.constraint_set.equalities:
            if p.nvars != n + 2:
                raise DimensionError("trig system polynomials must include the sin/cos placeholders")

    @property
    def angle_name(self) -> str:
        return self.var_names[self.angle]

    def rhs(self) -> Callable[[np.ndarray], np.ndarray]:
        def f(x):
            x = np.asarray(x, dtype=float)
            ext = np.concatenate([x, [math.sin(x[self.angle]), math.cos(x[self.angle])]])
            return np.array([p.evaluate(ext) for p in self.field])
        return f


def lift_trig_state(sys: TrigSystem, stabilize: bool = False,
                    names: Tuple[str, str] = ("s", "c")) -> DynSystem:
    """Replace the angle by ``(s, c) = (sin theta, cos theta)``.

    The angle disappears from the state (it evolves passively); the new pair is
    appended after the remaining variables.
    """
    n = len(sys.var_names)
    a = sys.angle
    all_polys = sys.field + sys.constraint_set.inequalities + sys.constraint_set.equalities
    for p in all_polys:
        if p.degree_in(a) > 0:
            raise ValueError(f"angle {sys.angle_name!r} appears outside its sin/cos placeholders")
    others = [k for k in range(n) if k != a]
    m = len(others) + 2
    subs: List[Polynomial] = [None] * (n + 2)  # type: ignore[list-item]
    for new, old in enumerate(others):
        subs[old] = Polynomial.variable(new, m)
    subs[a] = Polynomial.zero(m)
    s = Polynomial.variable(m - 2, m)
    c = Polynomial.variable(m - 1, m)
    subs[n] = s
    subs[n + 1] = c
    lifted = [sys.field[k].compose(subs) for k in others]
    omega = sys.field[a].compose(subs)
    fs = omega * c
    fc = -(omega * s)
    constraints = SemialgebraicSet(
        tuple(g.compose(subs) for g in sys.constraint_set.inequalities),
        tuple(h.compose(subs) for h in sys.constraint_set.equalities),
    )
    if stabilize:
        attract = 1.0 - s * s - c * c
        fs = fs + attract * s
        fc = fc + attract * c
    else:
        constraints = constraints.extended(equalities=[1.0 - s * s - c * c])
    meta = dict(sys.metadata)
    meta.update({"passive": sys.angle_name, "trig_vars": names, "stabilized_trig": stabilize})
    var_names = tuple(sys.var_names[k] for k in others) + tuple(names)
    return DynSystem(var_names, tuple(lifted) + (fs, fc), constraints, meta)


def taylor_sin(order: int, about_pi: bool = False) -> Polynomial:
    """Taylor polynomial of ``sin`` truncated at ``order``.

    With ``about_pi`` the polynomial is in ``u = pi - theta``; since
    ``sin(theta) = sin(u)`` it has the same coefficients, and ``p(pi - theta)``
    approximates ``sin(theta)`` near ``theta = pi``.
    """
    if order % 2 == 0:
        raise ValueError("sine expansion order must be odd")
    if order not in (1, 3, 5, 7, 9):
        raise ValueError("supported orders are 1, 3, 5, 7, 9")
    terms = {(k,): (-1) ** ((k - 1) // 2) / math.factorial(k) for k in range(1, order + 1, 2)}
    return Polynomial(terms, 1)


# presets -------------------------------------------------------------------

def cubic1d() -> DynSystem:
    x = Polynomial.variable(0, 1)
    return DynSystem(("x",), (x - x ** 3,), metadata={"preset": "cubic1d"})


def duffing_forced(delta: float, alpha: float, beta: float, F: float, omega: float) -> ForcedSystem:
    """``x'' + delta x' + alpha x + beta x^3 = F cos(wt)`` as a forced first-order system."""
    x, y = Polynomial.variables(2)
    base = DynSystem(("x", "y"), (y, -delta * y - alpha * x - beta * x ** 3),
                     metadata={"preset": "duffing", "delta": delta, "alpha": alpha, "beta": beta})
    return ForcedSystem(base, F, omega, (ForcingTerm(1, 1.0, "cos"),))


def duffing(delta: float = 0.1, alpha: float = 1.0, beta: float = 0.04, F: float = 1.0,
            omega: float = 1.2, stabilize: bool = False) -> DynSystem:
    return autonomize_periodic(duffing_forced(delta, alpha, beta, F, omega), stabilize=stabilize)


def pendulum_trig(gamma: float) -> TrigSystem:
    """Unforced damped pendulum ``theta' = phi, phi' = -gamma phi - sin theta``."""
    theta, phi, S, C = Polynomial.variables(4)
    return TrigSystem(("theta", "phi"), 0, (phi, -gamma * phi - S),
                      metadata={"preset": "pendulum", "gamma": gamma})


#: phase making the ``sin`` forcing pair equal ``F cos(wt)``
PENDULUM_PHASE = math.pi / 2


def pendulum_forced(gamma: float, F: float, omega: float, stabilize: bool = False) -> ForcedSystem:
    lifted = lift_trig_state(pendulum_trig(gamma), stabilize=stabilize, names=("psi1", "psi2"))
    return ForcedSystem(lifted, F, omega, (ForcingTerm(0, 1.0, "sin"),))


def pendulum(gamma: float = 0.1, F: float = 0.1, omega: float = 1.0, stabilize: bool = False,
             unit_rotator: bool = True) -> DynSystem:
    """Five-variable lift ``(phi, psi1, psi2, z1, z2)`` of the driven pendulum.

    The rotator is on the unit circle by default, so ``z1^2`` averages to 1/2
    and ``phi' = -gamma phi - psi1 + F z1``.
    """
    return autonomize_periodic(pendulum_forced(gamma, F, omega, stabilize), stabilize=stabilize,
                               unit_rotator=unit_rotator)


def pendulum_direct_rhs(gamma: float, F: float, omega: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """``(theta, phi)`` right-hand side of ``theta'' + gamma theta' + sin theta = F cos(wt)``."""

    def f(t, x):
        theta, phi = x
        return np.array([phi, -gamma * phi - math.sin(theta) + F * math.cos(omega * t)])

    return f


def pendulum_lifted_state(theta: float, phi: float, F: float = 1.0, phase: float = PENDULUM_PHASE,
                          unit_rotator: bool = True) -> np.ndarray:
    radius = 1.0 if unit_rotator else F
    return np.concatenate([[phi, math.sin(theta), math.cos(theta)], forcing_initial_state(radius, phase)])


def pendulum_energy() -> Polynomial:
    """Mechanical energy ``phi^2/2 - psi2`` on the five-variable lift."""
    phi, psi1, psi2, z1, z2 = Polynomial.variables(5)
    return 0.5 * phi * phi - psi2


def pendulum_observable() -> Polynomial:
    """Energy plus ``z1^2``, the quantity bounded for the pendulum."""
    z1 = Polynomial.variable(3, 5)
    return pendulum_energy() + z1 * z1


def preset(name: str, **params) -> DynSystem:
    builders = {"duffing": duffing, "pendulum": pendulum, "cubic1d": cubic1d}
    if name not in builders:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(builders)}")
    return builders[name](**params)


def project_to_constraints(sys: DynSystem, x0, iters: int = 50, tol: float = 1e-13) -> np.ndarray:
    """Move ``x0`` onto the equality constraints by Gauss-Newton (minimum-norm) steps."""
    x = np.array(x0, dtype=float)
    eqs = sys.constraint_set.equalities
    if not eqs:
        return x
    grads = [h.grad() for h in eqs]
    for _ in range(iters):
        r = np.array([h.evaluate(x) for h in eqs])
        if np.max(np.abs(r)) <= tol:
            break
        J = np.array([[gk.evaluate(x) for gk in g] for g in grads])
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        x = x + step
    return x
