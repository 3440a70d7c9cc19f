"""Bounds on long-time averages via polynomial auxiliary functions.

For ``x' = f(x)`` on an invariant set ``K`` and any polynomial ``V``, every
long-time average of ``Phi`` is at most ``U`` whenever
``U - Phi - f . grad V >= 0`` on ``K``.  Replacing non-negativity by an SOS
certificate (localized to ``K`` with the S-procedure) gives an SDP in ``U``,
the coefficients of ``V`` and the multipliers.  Lower bounds bound ``-Phi``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import sdpcore
from .dynsys import DynSystem, SemialgebraicSet
from .polyring import Monomial, Polynomial, lie_derivative, monomial_basis
from .sdpcore import SdpSolution, SolverOptions, SolverStatus
from .soscert import (EqualityReducer, LinearPolyExpr, ProgramBuilder, SosProgram, UnrepresentableMonomial,
                      reconstruct, s_procedure, sign_symmetry_group, signature, split_basis)

UPPER = "upper"
LOWER = "lower"
#: residual and relative-gap level below which a non-Optimal solve is still used as a bound
RELIABLE_TOL = 1e-5


class BoundError(RuntimeError):
    """The SDP for a bound did not produce a usable certificate."""

    def __init__(self, message: str, result: Optional["BoundResult"] = None):
        super().__init__(message)
        self.result = result


@dataclass
class BoundQuery:
    system: DynSystem
    observable: Polynomial
    direction: str = UPPER
    v_degree: int = 2
    multiplier_degree: Union[None, int, Sequence[int]] = None
    sharpness_tol: float = 1e-6
    max_degree: Optional[int] = None
    symmetry: bool = True
    equality_mode: str = "auto"
    prune: bool = True
    scale: Union[None, str, Sequence[float]] = "auto"
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.direction not in (UPPER, LOWER):
            raise ValueError(f"direction must be 'upper' or 'lower', got {self.direction!r}")
        if self.observable.nvars != self.system.dim:
            raise ValueError("observable and system have different numbers of variables")
        if self.v_degree < 1:
            raise ValueError("auxiliary function degree must be at least 1")
        if self.equality_mode not in ("auto", "reduce", "multiplier"):
            raise ValueError(f"unknown equality_mode {self.equality_mode!r}")
        if isinstance(self.scale, str):
            if self.scale != "auto":
                raise ValueError(f"scale must be 'auto', None or one positive value per variable, got {self.scale!r}")
        elif self.scale is not None:
            s = np.asarray(self.scale, dtype=float)
            if s.shape != (self.system.dim,) or not np.all(s > 0) or not np.all(np.isfinite(s)):
                raise ValueError("scale needs one positive finite value per variable")


@dataclass
class BoundResult:
    bound: float
    direction: str
    v_degree: int
    status: SolverStatus
    V: Optional[Polynomial] = None
    multipliers: Dict[str, Polynomial] = field(default_factory=dict)
    gram: List[np.ndarray] = field(default_factory=list)
    gap: float = math.nan
    certificate_residual: float = math.nan
    min_gram_eigenvalue: float = math.nan
    sdp: Optional[SdpSolution] = None
    program: Optional[SosProgram] = None
    escalation_trace: List[Tuple[int, float]] = field(default_factory=list)
    hint: str = ""
    scale: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.status is SolverStatus.OPTIMAL

    @property
    def reliable(self) -> bool:
        """Optimal, or a stalled solve whose gap and residuals are still small."""
        if self.status is SolverStatus.OPTIMAL:
            return True
        if self.status not in (SolverStatus.NUMERICAL_FAILURE, SolverStatus.MAX_ITERATIONS) or self.sdp is None:
            return False
        sol = self.sdp
        return (sol.rel_gap <= RELIABLE_TOL and sol.primal_infeas <= RELIABLE_TOL
                and sol.dual_infeas <= RELIABLE_TOL and math.isfinite(self.bound))

    @property
    def value(self) -> float:
        """The bound when reliable, NaN otherwise."""
        return self.bound if self.reliable else math.nan

    def record(self, names: Optional[Sequence[str]] = None, with_v: bool = False) -> str:
        line = (f"direction={self.direction} degree={self.v_degree} U={self.bound:.6f} "
                f"gap={self.gap:.3e} status={self.status.value}")
        if self.hint:
            line += f" hint={self.hint}"
        out = [line]
        if with_v and self.V is not None:
            out.append(f"V={self.V.to_string(names)}")
        return "\n".join(out)


def _degree_of_lie_terms(system: DynSystem, monos: Sequence[Monomial]) -> int:
    fdeg = [f.degree() for f in system.field]
    best = -1
    for m in monos:
        for k, e in enumerate(m):
            if e and fdeg[k] >= 0:
                best = max(best, sum(m) - 1 + fdeg[k])
    return best


def equality_reducer(q: BoundQuery) -> Optional[EqualityReducer]:
    """Reducer for the equality constraints, or None when multipliers are used.

    ``auto`` reduces whenever the equalities have coprime leading monomials;
    free multipliers on such constraints leave the SDP without an interior.
    """
    eqs = list(q.system.constraint_set.equalities)
    if q.equality_mode == "multiplier" or not eqs:
        return None
    red = EqualityReducer.try_build(eqs)
    if red is None and q.equality_mode == "reduce":
        raise ValueError("equality constraints do not have coprime leading monomials")
    return red


def _nice(v: float) -> float:
    """Round to two significant digits so automatic scales print cleanly."""
    return float(f"{v:.2g}")


def _circle_radius(h: Polynomial) -> Optional[Tuple[Tuple[int, ...], float]]:
    """``(vars, r)`` when ``h = a (r^2 - sum x_i^2)`` over two or more variables."""
    const = h.constant_term()
    squares = []
    for m, c in h.items():
        if sum(m) == 0:
            continue
        if sum(m) != 2 or max(m) != 2:
            return None
        squares.append((m.index(2), c))
    if len(squares) < 2 or const == 0:
        return None
    a = -squares[0][1]
    if any(abs(c + a) > 1e-12 * abs(a) for _, c in squares) or const / a <= 0:
        return None
    return tuple(k for k, _ in squares), math.sqrt(const / a)


@functools.lru_cache(maxsize=64)
def auto_scale(system: DynSystem) -> Tuple[float, ...]:
    """Per-variable scales: circle radii for rotator pairs, simulated amplitudes elsewhere.

    SDPs for systems whose attractor sits far from the unit box are badly
    conditioned at high degree; working in ``x / scale`` fixes that without
    changing the bound.  Variables with tiny or unknown amplitude keep 1.
    """
    from .simulate import rms_scale

    n = system.dim
    preset = system.metadata.get("scale")
    if preset is not None:
        return tuple(float(v) for v in preset)
    amp = rms_scale(system)
    scale = np.ones(n) if amp is None else np.maximum(amp, 0.1)
    for h in system.constraint_set.equalities:
        circ = _circle_radius(h)
        if circ is not None:
            for k in circ[0]:
                scale[k] = circ[1]
    return tuple(_nice(v) for v in scale)


def resolve_scale(q: BoundQuery) -> np.ndarray:
    if q.scale is None:
        return np.ones(q.system.dim)
    if isinstance(q.scale, str):
        return np.array(auto_scale(q.system))
    return np.asarray(q.scale, dtype=float)


def _normalized(p: Polynomial) -> Tuple[Polynomial, float]:
    c = p.max_abs_coeff()
    return (p.scale(1.0 / c), c) if c > 0 else (p, 1.0)


def scale_system(system: DynSystem, observable: Polynomial, scale: np.ndarray):
    """Rewrite in ``x~ = x / scale``; constraints are normalized to unit max coefficient.

    Returns the scaled system, observable, and the normalization factors of the
    inequalities and equalities.
    """
    n = system.dim
    subs = [Polynomial.variable(k, n).scale(float(scale[k])) for k in range(n)]
    field_s = tuple(f.compose(subs).scale(1.0 / float(scale[k])) for k, f in enumerate(system.field))
    ineq = [_normalized(g.compose(subs)) for g in system.constraint_set.inequalities]
    eq = [_normalized(h.compose(subs)) for h in system.constraint_set.equalities]
    cset = SemialgebraicSet(tuple(g for g, _ in ineq), tuple(h for h, _ in eq))
    scaled = DynSystem(system.var_names, field_s, cset, dict(system.metadata))
    return scaled, observable.compose(subs), [c for _, c in ineq], [c for _, c in eq]


def unscale_poly(p: Polynomial, scale: np.ndarray) -> Polynomial:
    """``p(x / scale)`` for a polynomial written in scaled variables."""
    n = p.nvars
    return p.compose([Polynomial.variable(k, n).scale(1.0 / float(scale[k])) for k in range(n)])


def build_program(q: BoundQuery) -> SosProgram:
    """SOS program ``min U s.t. U - Phi - f.grad V`` localized to the constraint set.

    The program lives in scaled variables (``meta['scale']``).
    """
    scale = resolve_scale(q)
    if np.all(scale == 1.0):
        program = _build(q)
        program.meta.update(scale=scale, ineq_norms=[1.0] * len(q.system.constraint_set.inequalities),
                            eq_norms=[1.0] * len(q.system.constraint_set.equalities))
        return program
    sysm, obs, gn, hn = scale_system(q.system, q.observable, scale)
    program = _build(replace(q, system=sysm, observable=obs, scale=None))
    program.meta.update(scale=scale, ineq_norms=gn, eq_norms=hn)
    return program


def _build(q: BoundQuery) -> SosProgram:
    sysm = q.system
    n = sysm.dim
    phi = q.observable if q.direction == UPPER else -q.observable
    cset = sysm.constraint_set
    if q.symmetry:
        group = sign_symmetry_group(sysm.field, invariant=[phi] + list(cset.inequalities),
                                    signed=list(cset.equalities))
    else:
        group = [(1,) * n]
    invariant = (1,) * len(group)

    builder = ProgramBuilder(n, sysm.var_names)
    u_var = builder.new_var("U")
    reducer = equality_reducer(q)
    v_monos = [m for m in monomial_basis(n, q.v_degree, min_degree=1) if signature(m, group) == invariant]
    if reducer is not None and all(reducer.reduce(lie_derivative(h, sysm.field)).max_abs_coeff() < 1e-12
                                   for h in cset.equalities):
        # the constraint set is invariant, so V only matters modulo the ideal
        v_monos = [m for m in v_monos if reducer.is_standard(m)]
    builder.free_poly("V", v_monos)
    coeffs = {u_var: Polynomial.constant(1.0, n)}
    for k, m in builder.free_polys["V"]:
        lie = lie_derivative(Polynomial.monomial(m), sysm.field)
        if not lie.is_zero():
            coeffs[k] = -lie
    certified = LinearPolyExpr(-phi, coeffs)

    raw = max(phi.degree(), _degree_of_lie_terms(sysm, v_monos), 0)
    top = raw + (raw % 2)
    cons = list(cset.inequalities) + list(cset.equalities)
    if q.multiplier_degree is None:
        mdeg = []
        for k, p in enumerate(cons):
            d = top - p.degree()
            d -= d % 2
            mdeg.append(d)
    elif isinstance(q.multiplier_degree, (int, np.integer)):
        mdeg = [int(q.multiplier_degree)] * len(cons)
    else:
        mdeg = list(q.multiplier_degree)
    n_in = len(cset.inequalities)
    for k, (p, d) in enumerate(zip(cons, mdeg)):
        if d >= 0 and d + p.degree() > top:
            top = d + p.degree() + (d + p.degree()) % 2
    certified, _ = s_procedure(certified, cset, mdeg, builder, group, reducer=reducer)

    half = top // 2
    gram = monomial_basis(n, half)
    if reducer is not None:
        gram = [m for m in gram if reducer.is_standard(m)]
    for part in split_basis(gram, group):
        builder.add_block(part, owner="sigma0")
    program = SosProgram(nvars=n, names=list(sysm.var_names), var_names=builder.var_names,
                         certified=certified, blocks=builder.blocks, block_weights=builder.block_weights,
                         objective_var=u_var, free_polys=builder.free_polys, sos_polys=builder.sos_polys,
                         meta={"group": group, "gram_degree": half, "multiplier_degrees": mdeg,
                               "direction": q.direction}, reducer=reducer)
    if q.prune:
        program.meta["pruned"] = program.facial_reduce()
    program.check_representable()
    return program


def bound(q: BoundQuery, program: Optional[SosProgram] = None) -> BoundResult:
    """Solve one bound program and recover the auxiliary function and multipliers.

    ``V`` and the multipliers are returned in the original variables; Gram
    matrices refer to the program's (scaled) monomial bases.  With equality
    reduction the equality multipliers ``r_j`` are recovered by division.
    """
    program = program or build_program(q)
    prob, rec = program.to_sdp()
    sol = sdpcore.solve(prob, q.solver)
    U = rec.objective(prob, sol.X)
    u = rec.decision_values(prob, sol.X)
    n = program.nvars
    scale = np.asarray(program.meta.get("scale", np.ones(n)), dtype=float)
    gn = program.meta.get("ineq_norms", [])
    hn = program.meta.get("eq_norms", [])
    grams = [program.gram_matrix(b, Y) for b, Y in enumerate(sol.X)]
    V = Polynomial({m: u[k] for k, m in program.free_polys.get("V", [])}, n)
    scaled: Dict[str, Polynomial] = {}
    for label, entries in program.free_polys.items():
        if label != "V":
            scaled[label] = Polynomial({m: u[k] for k, m in entries}, n)
    for label, blocks in program.sos_polys.items():
        poly = Polynomial.zero(n)
        for b in blocks:
            poly = poly + reconstruct(grams[b], program.blocks[b].basis)
        scaled[label] = poly
    if program.reducer is not None:
        sys_s, obs_s, _, _ = scale_system(q.system, q.observable, scale)
        phi_s = obs_s if q.direction == UPPER else -obs_s
        rest = Polynomial.constant(U, n) - phi_s - lie_derivative(V, sys_s.field)
        for k, g in enumerate(sys_s.constraint_set.inequalities):
            rest = rest - scaled.get(f"s{k}", Polynomial.zero(n)) * g
        rest = rest - scaled.get("sigma0", Polynomial.zero(n))
        quots, _ = program.reducer.divide(rest)
        for j, qj in enumerate(quots):
            scaled[f"r{j}"] = qj
    multipliers: Dict[str, Polynomial] = {}
    for label, poly in scaled.items():
        norm = 1.0
        if label.startswith("s") and label[1:].isdigit():
            norm = gn[int(label[1:])] if int(label[1:]) < len(gn) else 1.0
        elif label.startswith("r") and label[1:].isdigit():
            norm = hn[int(label[1:])] if int(label[1:]) < len(hn) else 1.0
        multipliers[label] = unscale_poly(poly, scale).scale(1.0 / norm)
    residual = certificate_residual(program, u, grams)
    min_eig = min(float(np.linalg.eigvalsh(Xk)[0]) for Xk in sol.X)
    value = U if q.direction == UPPER else -U
    hint = ""
    if sol.status is SolverStatus.PRIMAL_INFEASIBLE:
        hint = "DegreeTooLow"
    return BoundResult(bound=value, direction=q.direction, v_degree=q.v_degree, status=sol.status,
                       V=unscale_poly(V, scale), multipliers=multipliers, gram=grams, gap=sol.gap,
                       certificate_residual=residual, min_gram_eigenvalue=min_eig, sdp=sol, program=program,
                       escalation_trace=[(q.v_degree, value)], hint=hint, scale=scale)


def identity_residual(result: BoundResult, system: DynSystem, observable: Polynomial) -> float:
    """Largest coefficient of ``U - Phi - f.grad V - sum s_i g_i - sum r_j h_j - sigma0`` in original variables."""
    sign = 1.0 if result.direction == UPPER else -1.0
    assert result.V is not None
    n = system.dim
    poly = Polynomial.constant(sign * result.bound, n) - sign * observable - lie_derivative(result.V, system.field)
    cset = system.constraint_set
    for k, g in enumerate(cset.inequalities):
        poly = poly - result.multipliers.get(f"s{k}", Polynomial.zero(n)) * g
    for j, h in enumerate(cset.equalities):
        poly = poly - result.multipliers.get(f"r{j}", Polynomial.zero(n)) * h
    poly = poly - result.multipliers.get("sigma0", Polynomial.zero(n))
    return poly.max_abs_coeff()


def certificate_residual(program: SosProgram, u: np.ndarray, X: Sequence[np.ndarray]) -> float:
    """Largest coefficient of ``certified(u) - sum_k weight_k z_k^T Q_k z_k`` (modulo the equalities)."""
    poly = program.certified.substitute(u)
    for blk, weight, Q in zip(program.blocks, program.block_weights, X):
        poly = poly - weight * reconstruct(Q, blk.basis)
    if program.reducer is not None:
        poly = program.reducer.reduce(poly)
    return poly.max_abs_coeff()


def escalate(q: BoundQuery) -> BoundResult:
    """Raise the auxiliary-function degree by 2 until the bound stops moving.

    Infeasible degrees are skipped.  An unreliable solve ends the escalation and
    the last reliable result is returned.
    """
    max_degree = q.max_degree if q.max_degree is not None else q.v_degree + 8
    if q.v_degree > max_degree:
        raise ValueError("starting degree exceeds max_degree")
    trace: List[Tuple[int, float]] = []
    prev: Optional[BoundResult] = None
    last: Optional[BoundResult] = None
    degree = q.v_degree
    while degree <= max_degree:
        try:
            res = bound(replace(q, v_degree=degree))
        except UnrepresentableMonomial:
            raise
        except Exception as exc:
            raise BoundError(f"degree {degree}: {exc}") from exc
        last = res
        if res.status is SolverStatus.PRIMAL_INFEASIBLE:
            trace.append((degree, math.nan))
            degree += 2
            continue
        if not res.reliable:
            trace.append((degree, math.nan))
            break
        trace.append((degree, res.bound))
        if prev is not None and abs(prev.bound - res.bound) <= q.sharpness_tol * max(1.0, abs(prev.bound)):
            res.escalation_trace = trace
            return res
        prev = res
        degree += 2
    out = prev if prev is not None else last
    assert out is not None
    out.escalation_trace = trace
    return out


def bound_pair(system: DynSystem, observable: Polynomial, v_degree: int, **kwargs) -> Tuple[BoundResult, BoundResult]:
    up = bound(BoundQuery(system, observable, UPPER, v_degree, **kwargs))
    lo = bound(BoundQuery(system, observable, LOWER, v_degree, **kwargs))
    return lo, up


def localization_values(result: BoundResult, system: DynSystem, observable: Polynomial, points) -> np.ndarray:
    """``Phi + f . grad V`` on ``points``; values near the bound mark where extremal orbits can live."""
    sign = 1.0 if result.direction == UPPER else -1.0
    assert result.V is not None
    g = sign * observable + lie_derivative(result.V, system.field)
    return sign * g.evaluate_many(np.asarray(points, dtype=float))
