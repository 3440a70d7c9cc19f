"""Gram-matrix parameterization of sum-of-squares constraints.

A polynomial ``p`` that is affine in decision variables ``u`` is certified
SOS by a PSD matrix ``Q`` with ``p = z^T Q z`` for a monomial vector ``z``.
Equating coefficients gives one linear *matching* equation per monomial.
Constraint sets are handled with the S-procedure: the certificate is
``p - sum s_i g_i - sum r_j h_j`` with SOS ``s_i`` (their own PSD blocks) and
free polynomial ``r_j`` (extra decision variables).

Everything here is pure assembly; :meth:`SosProgram.to_sdp` turns a program
into the block LMI form solved by :mod:`sosbound.sdpcore`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dynsys import DynSystem, SemialgebraicSet
from .polyring import Monomial, Polynomial, grlex_key, monomial_basis
from .sdpcore import SdpBlock, SdpProblem


PROJECTED_ENTRY_TOL = 1e-13
FACE_EIG_TOL = 1e-7


def _null_basis(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the null space of ``A`` from an SVD."""
    A = np.atleast_2d(A)
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n)
    _, sing, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(sing > rtol * max(float(sing[0]) if sing.size else 0.0, 1.0)))
    return Vt[rank:].T


class UnrepresentableMonomial(ValueError):
    """A monomial of the certified polynomial lies outside the Gram product span."""

    def __init__(self, monomial: Monomial, names: Optional[Sequence[str]] = None):
        self.monomial = tuple(monomial)
        label = Polynomial.monomial(self.monomial).to_string(names) if names else str(self.monomial)
        super().__init__(f"monomial {label} cannot be represented by the Gram basis (degree too low?)")


class DegreeBookkeepingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# affine polynomial expressions


@dataclass(frozen=True)
class LinearPolyExpr:
    """``constant + sum_v u_v * coeffs[v]`` with polynomial coefficients."""

    constant: Polynomial
    coeffs: Mapping[int, Polynomial] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for k, p in self.coeffs.items():
            if p.nvars != self.constant.nvars:
                raise ValueError("coefficient polynomials must share nvars with the constant")
            if not p.is_zero():
                clean[int(k)] = p
        object.__setattr__(self, "coeffs", clean)

    @classmethod
    def const(cls, p: Polynomial) -> "LinearPolyExpr":
        return cls(p, {})

    @property
    def nvars(self) -> int:
        return self.constant.nvars

    def __add__(self, other):
        if isinstance(other, Polynomial):
            return LinearPolyExpr(self.constant + other, self.coeffs)
        if not isinstance(other, LinearPolyExpr):
            return NotImplemented
        coeffs = dict(self.coeffs)
        for k, p in other.coeffs.items():
            coeffs[k] = coeffs[k] + p if k in coeffs else p
        return LinearPolyExpr(self.constant + other.constant, coeffs)

    def __neg__(self):
        return LinearPolyExpr(-self.constant, {k: -p for k, p in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s: float) -> "LinearPolyExpr":
        return LinearPolyExpr(self.constant.scale(s), {k: p.scale(s) for k, p in self.coeffs.items()})

    def times(self, q: Polynomial) -> "LinearPolyExpr":
        return LinearPolyExpr(self.constant * q, {k: p * q for k, p in self.coeffs.items()})

    def support(self) -> set:
        out = set(m for m, _ in self.constant.items())
        for p in self.coeffs.values():
            out.update(m for m, _ in p.items())
        return out

    def degree(self) -> int:
        return max((sum(m) for m in self.support()), default=-1)

    def coefficient(self, m: Monomial) -> Tuple[float, Dict[int, float]]:
        """Constant part and per-variable coefficients of monomial ``m``."""
        return self.constant.coeff(m), {k: p.coeff(m) for k, p in self.coeffs.items() if p.coeff(m) != 0.0}

    def substitute(self, values: Sequence[float]) -> Polynomial:
        out = self.constant
        for k, p in self.coeffs.items():
            out = out + p.scale(float(values[k]))
        return out


# ---------------------------------------------------------------------------
# Gram blocks and matching constraints


@dataclass(frozen=True)
class GramBlock:
    basis: Tuple[Monomial, ...]
    block_id: str = "Q"

    def __post_init__(self):
        basis = tuple(tuple(m) for m in self.basis)
        object.__setattr__(self, "basis", basis)
        if len(set(basis)) != len(basis):
            raise ValueError("Gram basis has duplicate monomials")
        if list(basis) != sorted(basis, key=grlex_key):
            raise ValueError("Gram basis must be in graded-lex order")

    @property
    def size(self) -> int:
        return len(self.basis)


@dataclass(frozen=True)
class MatchingConstraint:
    """``sum_t weight_t * Q[block_t][i_t, j_t] == rhs_constant + sum_v rhs_coeffs[v] u_v``.

    Gram terms use ``i <= j``; an off-diagonal entry appears once with its
    multiplicity folded into the weight.
    """

    monomial: Monomial
    gram_terms: Tuple[Tuple[int, int, int, float], ...]
    rhs_constant: float
    rhs_coeffs: Mapping[int, float]

    def normalized(self) -> Tuple[Dict[Tuple[int, int, int], float], float]:
        """Terms and constant rescaled so the largest weight is 1 (for comparisons)."""
        if not self.gram_terms:
            return {}, self.rhs_constant
        scale = max(abs(w) for *_, w in self.gram_terms)
        return ({(b, i, j): w / scale for b, i, j, w in self.gram_terms}, self.rhs_constant / scale)

    def describe(self, names: Optional[Sequence[str]] = None, var_names: Optional[Sequence[str]] = None) -> str:
        lhs = " + ".join(f"{w:g}*Q{b}[{i},{j}]" for b, i, j, w in self.gram_terms) or "0"
        rhs = [f"{self.rhs_constant:g}"]
        for v, c in sorted(self.rhs_coeffs.items()):
            label = var_names[v] if var_names else f"u{v}"
            rhs.append(f"{c:+g}*{label}")
        mono = Polynomial.monomial(self.monomial).to_string(names)
        return f"[{mono}] {lhs} = {' '.join(rhs)}"


def _block_entries(basis: Sequence[Monomial], weight: Polynomial, reducer: Optional["EqualityReducer"] = None):
    """Yield ``(i, j, monomial, value)`` for ``i <= j`` of ``weight * z^T Q z``."""
    wterms = list(weight.items())
    for i, zi in enumerate(basis):
        for j in range(i, len(basis)):
            zj = basis[j]
            mult = 1.0 if i == j else 2.0
            prod = tuple(a + b for a, b in zip(zi, zj))
            for gm, gc in wterms:
                m = tuple(a + b for a, b in zip(prod, gm))
                if reducer is None:
                    yield i, j, m, mult * gc
                else:
                    for rm, rc in reducer.reduce_monomial(m).items():
                        yield i, j, rm, mult * gc * rc


def gram_parameterize(p_expr: LinearPolyExpr, basis: Sequence[Monomial], block_id: str = "Q"):
    """Matching constraints for ``p_expr == z^T Q z`` over ``basis``.

    Returns ``(GramBlock, [MatchingConstraint, ...])`` with one constraint per
    monomial of the product span, in graded-lex order.
    """
    block = GramBlock(tuple(sorted((tuple(m) for m in basis), key=grlex_key)), block_id)
    one = Polynomial.constant(1.0, p_expr.nvars)
    terms: Dict[Monomial, List[Tuple[int, int, int, float]]] = {}
    for i, j, m, w in _block_entries(block.basis, one):
        terms.setdefault(m, []).append((0, i, j, w))
    for m in p_expr.support():
        if m not in terms:
            raise UnrepresentableMonomial(m)
    constraints = []
    for m in sorted(terms, key=grlex_key):
        c0, cv = p_expr.coefficient(m)
        constraints.append(MatchingConstraint(m, tuple(terms[m]), c0, cv))
    return block, constraints


def reconstruct(Q, basis: Sequence[Monomial]) -> Polynomial:
    """Expand ``z^T Q z``."""
    Q = np.asarray(Q, dtype=float)
    n = len(basis)
    if Q.shape != (n, n):
        raise ValueError(f"Gram matrix shape {Q.shape} does not match basis size {n}")
    if n == 0:
        raise ValueError("empty basis")
    nvars = len(basis[0])
    out: Dict[Monomial, float] = {}
    for i in range(n):
        for j in range(n):
            if Q[i, j] != 0.0:
                m = tuple(a + b for a, b in zip(basis[i], basis[j]))
                out[m] = out.get(m, 0.0) + Q[i, j]
    return Polynomial(out, nvars)


def is_psd(Q, tol: float = 1e-12) -> bool:
    """Smallest eigenvalue at least ``-tol`` relative to the largest entry."""
    Q = np.asarray(Q, dtype=float)
    scale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))
    return bool(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] >= -tol * scale)


# ---------------------------------------------------------------------------
# reduction modulo equality constraints


class EqualityReducer:
    """Normal forms modulo equalities whose leading monomials are pairwise coprime.

    Coprime leading monomials make the equalities a Groebner basis, so plain
    division gives a unique remainder.  Certificates are then matched modulo the
    ideal and Gram bases use standard monomials only, which removes the null
    directions a free multiplier would add to the SDP.
    """

    def __init__(self, equalities: Sequence[Polynomial]):
        self.equalities = list(equalities)
        self.leads: List[Tuple[Monomial, float, Polynomial]] = []
        for h in self.equalities:
            if h.is_zero():
                raise ValueError("zero equality constraint")
            lm = max((m for m, _ in h.items()), key=grlex_key)
            lc = h.coeff(lm)
            tail = h - Polynomial.monomial(lm, lc)
            self.leads.append((lm, lc, tail.scale(-1.0 / lc)))
        for a in range(len(self.leads)):
            for b in range(a + 1, len(self.leads)):
                if any(x and y for x, y in zip(self.leads[a][0], self.leads[b][0])):
                    raise ValueError("leading monomials of the equalities are not coprime")
        self._cache: Dict[Monomial, Polynomial] = {}

    @classmethod
    def try_build(cls, equalities: Sequence[Polynomial]) -> Optional["EqualityReducer"]:
        if not equalities:
            return None
        try:
            return cls(equalities)
        except ValueError:
            return None

    def is_standard(self, m: Monomial) -> bool:
        return not any(all(e >= l for e, l in zip(m, lm)) for lm, _, _ in self.leads)

    def reduce_monomial(self, m: Monomial) -> Polynomial:
        m = tuple(m)
        hit = self._cache.get(m)
        if hit is not None:
            return hit
        for lm, _, rest in self.leads:
            if all(e >= l for e, l in zip(m, lm)):
                quot = tuple(e - l for e, l in zip(m, lm))
                out = Polynomial.zero(len(m))
                for tm, tc in (rest * Polynomial.monomial(quot)).items():
                    out = out + self.reduce_monomial(tm).scale(tc)
                break
        else:
            out = Polynomial.monomial(m)
        self._cache[m] = out
        return out

    def reduce(self, p: Polynomial) -> Polynomial:
        out: Dict[Monomial, float] = {}
        for m, c in p.items():
            for rm, rc in self.reduce_monomial(m).items():
                out[rm] = out.get(rm, 0.0) + c * rc
        return Polynomial(out, p.nvars)

    def divide(self, p: Polynomial) -> Tuple[List[Polynomial], Polynomial]:
        """Quotients ``q_j`` and remainder with ``p = sum q_j h_j + remainder``."""
        n = p.nvars
        work = dict(p.items())
        quots: List[Dict[Monomial, float]] = [{} for _ in self.leads]
        rem: Dict[Monomial, float] = {}
        hs = self.equalities
        while work:
            m = max(work, key=grlex_key)
            c = work.pop(m)
            for j, (lm, lc, _) in enumerate(self.leads):
                if all(e >= l for e, l in zip(m, lm)):
                    quot = tuple(e - l for e, l in zip(m, lm))
                    f = c / lc
                    quots[j][quot] = quots[j].get(quot, 0.0) + f
                    for tm, tc in hs[j].items():
                        if tm == lm:
                            continue
                        mm = tuple(a + b for a, b in zip(tm, quot))
                        work[mm] = work.get(mm, 0.0) - f * tc
                    break
            else:
                rem[m] = rem.get(m, 0.0) + c
        return [Polynomial(q, n) for q in quots], Polynomial(rem, n)

    def reduce_expr(self, e: LinearPolyExpr) -> LinearPolyExpr:
        return LinearPolyExpr(self.reduce(e.constant), {k: self.reduce(p) for k, p in e.coeffs.items()})


# ---------------------------------------------------------------------------
# sign symmetries


def _signs_of(p: Polynomial, signs: Sequence[int]) -> set:
    out = set()
    for m, _ in p.items():
        s = 1
        for e, sg in zip(m, signs):
            if sg < 0 and e % 2:
                s = -s
        out.add(s)
    return out


def sign_symmetry_group(field_polys: Sequence[Polynomial], invariant: Sequence[Polynomial] = (),
                        signed: Sequence[Polynomial] = (), max_vars: int = 12) -> List[Tuple[int, ...]]:
    """Sign flips ``x -> diag(s) x`` under which the problem is unchanged.

    ``field_polys`` must be equivariant (``f_k(sx) = s_k f_k(x)``), polynomials
    in ``invariant`` unchanged, and those in ``signed`` unchanged up to an
    overall sign.  The identity is always the first element.
    """
    n = len(field_polys)
    identity = (1,) * n
    group = [identity]
    if n == 0 or n > max_vars:
        return group
    for signs in itertools.product((1, -1), repeat=n):
        if signs == identity:
            continue
        ok = all(_signs_of(f, signs) <= {s} for f, s in zip(field_polys, signs))
        ok = ok and all(_signs_of(p, signs) <= {1} for p in invariant)
        ok = ok and all(len(_signs_of(p, signs)) <= 1 for p in signed)
        if ok:
            group.append(signs)
    return group


def signature(m: Monomial, group: Sequence[Tuple[int, ...]]) -> Tuple[int, ...]:
    out = []
    for signs in group:
        s = 1
        for e, sg in zip(m, signs):
            if sg < 0 and e % 2:
                s = -s
        out.append(s)
    return tuple(out)


def poly_signature(p: Polynomial, group) -> Tuple[int, ...]:
    sigs = {signature(m, group) for m, _ in p.items()}
    if len(sigs) != 1:
        raise ValueError("polynomial is not homogeneous under the symmetry group")
    return sigs.pop()


def split_basis(basis: Sequence[Monomial], group) -> List[List[Monomial]]:
    """Partition a basis into classes whose pairwise products are invariant."""
    classes: Dict[Tuple[int, ...], List[Monomial]] = {}
    for m in basis:
        classes.setdefault(signature(m, group), []).append(m)
    return [classes[k] for k in sorted(classes, reverse=True)]


# ---------------------------------------------------------------------------
# programs


class ProgramBuilder:
    """Allocates decision variables and collects PSD blocks for one program."""

    def __init__(self, nvars: int, names: Optional[Sequence[str]] = None):
        self.nvars = nvars
        self.names = list(names) if names else [f"x{k + 1}" for k in range(nvars)]
        self.var_names: List[str] = []
        self.blocks: List[GramBlock] = []
        self.block_weights: List[Polynomial] = []
        self.free_polys: Dict[str, List[Tuple[int, Monomial]]] = {}
        self.sos_polys: Dict[str, List[int]] = {}

    def new_var(self, name: str) -> int:
        self.var_names.append(name)
        return len(self.var_names) - 1

    def free_poly(self, label: str, monomials: Sequence[Monomial]) -> LinearPolyExpr:
        """Polynomial with one free coefficient per monomial."""
        coeffs = {}
        entries = []
        for m in monomials:
            k = self.new_var(f"{label}[{Polynomial.monomial(m).to_string(self.names)}]")
            coeffs[k] = Polynomial.monomial(m)
            entries.append((k, tuple(m)))
        self.free_polys[label] = entries
        return LinearPolyExpr(Polynomial.zero(self.nvars), coeffs)

    def add_block(self, basis: Sequence[Monomial], weight: Optional[Polynomial] = None,
                  block_id: Optional[str] = None, owner: Optional[str] = None) -> int:
        if weight is None:
            weight = Polynomial.constant(1.0, self.nvars)
        idx = len(self.blocks)
        self.blocks.append(GramBlock(tuple(basis), block_id or f"Q{idx}"))
        self.block_weights.append(weight)
        if owner is not None:
            self.sos_polys.setdefault(owner, []).append(idx)
        return idx


@dataclass
class SosProgram:
    """``certified - sum_k weight_k * z_k^T Q_k z_k == 0`` with ``Q_k`` PSD.

    Certificate blocks have weight 1; S-procedure multiplier blocks carry their
    constraint polynomial as weight.  The objective minimizes ``objective_var``.
    """

    nvars: int
    names: List[str]
    var_names: List[str]
    certified: LinearPolyExpr
    blocks: List[GramBlock]
    block_weights: List[Polynomial]
    objective_var: int
    free_polys: Dict[str, List[Tuple[int, Monomial]]] = field(default_factory=dict)
    sos_polys: Dict[str, List[int]] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)
    reducer: Optional[EqualityReducer] = None
    projections: List[Optional[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.projections:
            self.projections = [None] * len(self.blocks)
        if self.reducer is not None:
            self.certified = self.reducer.reduce_expr(self.certified)

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def certificate_blocks(self) -> List[int]:
        owned = {b for blocks in self.sos_polys.values() for b in blocks}
        return [k for k in range(len(self.blocks)) if k not in owned]

    def monomial_index(self) -> Tuple[List[Monomial], Dict[Monomial, int]]:
        monos = set(self.certified.support())
        for blk, w in zip(self.blocks, self.block_weights):
            for _, _, m, _ in _block_entries(blk.basis, w, self.reducer):
                monos.add(m)
        ordered = sorted(monos, key=grlex_key)
        return ordered, {m: k for k, m in enumerate(ordered)}

    def matching_constraints(self) -> List[MatchingConstraint]:
        monos, index = self.monomial_index()
        terms: Dict[Monomial, List[Tuple[int, int, int, float]]] = {m: [] for m in monos}
        for b, (blk, w) in enumerate(zip(self.blocks, self.block_weights)):
            for i, j, m, v in _block_entries(blk.basis, w, self.reducer):
                terms[m].append((b, i, j, v))
        out = []
        for m in monos:
            c0, cv = self.certified.coefficient(m)
            out.append(MatchingConstraint(m, tuple(terms[m]), c0, cv))
        return out

    def _affine_data(self) -> Tuple[List[Monomial], Dict[Monomial, int], np.ndarray, np.ndarray]:
        """Monomials, their index, the constant part ``phi`` and the free-variable matrix ``B``."""
        monos, index = self.monomial_index()
        K = len(monos)
        phi = np.zeros(K)
        for m, c in self.certified.constant.items():
            phi[index[m]] = c
        B = np.zeros((K, self.n_vars))
        for v, p in self.certified.coeffs.items():
            for m, c in p.items():
                B[index[m], v] = c
        return monos, index, phi, B

    def block_entries(self, b: int, index: Mapping[Monomial, int]):
        """Symmetric atom entries ``(rows, cols, atoms, vals)`` of block ``b``.

        Projected blocks are expressed in the reduced coordinates
        ``Y`` with ``Q = P Y P^T``.
        """
        blk, weight = self.blocks[b], self.block_weights[b]
        rows, cols, atoms, vals = [], [], [], []
        for i, j, m, v in _block_entries(blk.basis, weight, self.reducer):
            a = index[m]
            if i == j:
                rows.append(i); cols.append(j); atoms.append(a); vals.append(v)
            else:
                half = 0.5 * v
                rows += [i, j]; cols += [j, i]; atoms += [a, a]; vals += [half, half]
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        atoms = np.asarray(atoms, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        P = self.projection(b)
        if P is None:
            return rows, cols, atoms, vals
        ua, local = np.unique(atoms, return_inverse=True)
        E = np.zeros((ua.size, blk.size, blk.size))
        np.add.at(E, (local, rows, cols), vals)
        Ep = np.matmul(np.matmul(P.T, E), P)
        Ep = 0.5 * (Ep + np.transpose(Ep, (0, 2, 1)))
        cut = PROJECTED_ENTRY_TOL * max(float(np.max(np.abs(Ep), initial=0.0)), 1.0)
        a, i, j = np.nonzero(np.abs(Ep) > cut)
        return i, j, ua[a], Ep[a, i, j]

    def projection(self, b: int) -> Optional[np.ndarray]:
        return self.projections[b] if b < len(self.projections) else None

    def reduced_size(self, b: int) -> int:
        P = self.projection(b)
        return self.blocks[b].size if P is None else P.shape[1]

    def gram_matrix(self, b: int, Y: np.ndarray) -> np.ndarray:
        """Gram matrix over the block's monomial basis from reduced coordinates."""
        P = self.projection(b)
        return np.asarray(Y, dtype=float) if P is None else P @ Y @ P.T

    def facial_reduce(self, tol: float = 1e-8, max_rounds: int = 60, dd: bool = True, sdp: bool = False) -> int:
        """Restrict Gram blocks to the face that contains every feasible certificate.

        Searches by linear programming for a functional ``lam`` on monomials
        that annihilates the free variables and the constant part and whose
        adjoint ``W_k = sum_a lam_a E_a`` is positive semidefinite on every
        block; then ``<W_k, Q_k> = 0`` for all feasible ``Q`` and each ``Q_k``
        lives in ``null(W_k)``.  Diagonal ``W`` (cheap, removes monomials) is
        tried first, then diagonally dominant ``W`` (rotates the block), then a
        general PSD ``W`` from an auxiliary SDP.
        Without this step the SDP can lack an interior point and
        interior-point iterations stall.  Returns the dimension removed.
        """
        if len(self.projections) < len(self.blocks):
            self.projections = list(self.projections) + [None] * (len(self.blocks) - len(self.projections))
        removed = 0
        for _ in range(max_rounds):
            step = self._facial_round(tol, dominant=False)
            if step == 0 and dd:
                step = self._facial_round(tol, dominant=True)
            if step == 0 and sdp:
                step = self._facial_round_sdp(tol)
            if step == 0:
                break
            removed += step
        return removed

    def _facial_round(self, tol: float, dominant: bool) -> int:
        from scipy.optimize import linprog
        from scipy import sparse

        monos, index, phi, B = self._affine_data()
        K = len(monos)
        tensors = []
        for b in range(len(self.blocks)):
            r = self.reduced_size(b)
            rows, cols, atoms, vals = self.block_entries(b, index)
            tensors.append((r, rows, cols, atoms, vals))
        # per block: diagonal rows D (r x K) and upper off-diagonal rows O (pairs x K)
        D_parts, O_parts, pair_ids = [], [], []
        for r, rows, cols, atoms, vals in tensors:
            on = rows == cols
            D_parts.append(sparse.coo_matrix((vals[on], (rows[on], atoms[on])), shape=(r, K)).tocsr())
            up = rows < cols
            iu, ju = np.triu_indices(r, 1)
            pid = np.full((r, r), -1, dtype=np.int64)
            pid[iu, ju] = np.arange(iu.size)
            O_parts.append(sparse.coo_matrix((vals[up], (pid[rows[up], cols[up]], atoms[up])),
                                             shape=(iu.size, K)).tocsr())
            pair_ids.append((iu, ju))
        D = sparse.vstack(D_parts).tocsr()
        O = sparse.vstack(O_parts).tocsr()
        nd, no = D.shape[0], O.shape[0]
        if nd == 0:
            return 0
        eq_top = sparse.vstack([sparse.csr_matrix(B.T), sparse.csr_matrix(phi.reshape(1, -1))])
        if not dominant:
            # variables [lam, t]: O lam = 0, t <= D lam, 0 <= t <= 1; maximize sum t
            A_eq = sparse.vstack([sparse.hstack([eq_top, sparse.csr_matrix((eq_top.shape[0], nd))]),
                                  sparse.hstack([O, sparse.csr_matrix((no, nd))])]).tocsr()
            A_ub = sparse.hstack([-D, sparse.identity(nd)]).tocsr()
            b_ub = np.zeros(nd)
            cost = np.concatenate([np.zeros(K), -np.ones(nd)])
            bounds = [(None, None)] * K + [(0.0, 1.0)] * nd
        else:
            # variables [lam, s]: |O lam| <= s, (row sums of s) <= D lam <= 1; maximize trace
            rows_s, cols_s = [], []
            off = 0
            base = 0
            for (iu, ju), Dp in zip(pair_ids, D_parts):
                k = np.arange(iu.size)
                rows_s += [base + iu, base + ju]
                cols_s += [off + k, off + k]
                off += iu.size
                base += Dp.shape[0]
            rows_s = np.concatenate(rows_s) if rows_s else np.zeros(0, dtype=np.int64)
            cols_s = np.concatenate(cols_s) if cols_s else np.zeros(0, dtype=np.int64)
            Ssum = sparse.coo_matrix((np.ones(rows_s.size), (rows_s, cols_s)), shape=(nd, no)).tocsr()
            I = sparse.identity(no)
            A_eq = sparse.hstack([eq_top, sparse.csr_matrix((eq_top.shape[0], no))]).tocsr()
            A_ub = sparse.vstack([sparse.hstack([O, -I]), sparse.hstack([-O, -I]),
                                  sparse.hstack([-D, Ssum]), sparse.hstack([D, sparse.csr_matrix((nd, no))])]).tocsr()
            b_ub = np.concatenate([np.zeros(2 * no + nd), np.ones(nd)])
            cost = np.concatenate([-np.asarray(D.sum(axis=0)).ravel(), np.zeros(no)])
            bounds = [(None, None)] * K + [(0.0, None)] * no
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]),
                      bounds=bounds, method="highs")
        if res.status != 0 or -res.fun <= tol:
            return 0
        lam = res.x[:K]
        removed = 0
        keep_blocks = []
        for b, (r, rows, cols, atoms, vals) in enumerate(tensors):
            W = np.zeros((r, r))
            np.add.at(W, (rows, cols), vals * lam[atoms])
            W = 0.5 * (W + W.T)
            scale = max(float(np.max(np.abs(np.diag(W)), initial=0.0)), 1.0)
            support = np.flatnonzero(np.max(np.abs(W), axis=1, initial=0.0) > tol * scale)
            if support.size == 0:
                keep_blocks.append(b)
                continue
            ev, vec = np.linalg.eigh(W[np.ix_(support, support)])
            null = vec[:, ev <= tol * scale]
            outside = np.setdiff1d(np.arange(r), support)
            Z = np.zeros((r, outside.size + null.shape[1]))
            Z[outside, np.arange(outside.size)] = 1.0
            Z[np.ix_(support, np.arange(outside.size, Z.shape[1]))] = null
            removed += r - Z.shape[1]
            if Z.shape[1] == 0:
                continue
            keep_blocks.append(b)
            P = self.projection(b)
            if P is None and null.shape[1] == 0:
                blk = self.blocks[b]
                self.blocks[b] = GramBlock(tuple(blk.basis[i] for i in outside), blk.block_id)
            else:
                self.projections[b] = Z if P is None else P @ Z
        self._keep_blocks(keep_blocks)
        return removed

    def reducing_certificate(self, tol: float = 1e-8, opts=None):
        """Reducing certificate from the auxiliary LMI ``max -t`` s.t. ``W(lam) + t I >= 0``, ``tr W = 1``.

        Its slack side is strictly feasible by construction, so the
        interior-point iterates converge to a maximal-rank certificate even
        when the original program has no interior.
        """
        from .sdpcore import SolverOptions, solve

        monos, index, phi, B = self._affine_data()
        K = len(monos)
        ent = [self.block_entries(b, index) for b in range(len(self.blocks))]
        sizes = [self.reduced_size(b) for b in range(len(self.blocks))]
        g = np.zeros(K)
        for rows, cols, atoms, vals in ent:
            on = rows == cols
            np.add.at(g, atoms[on], vals[on])
        L = _null_basis(np.column_stack([B, phi]).T)
        h = L.T @ g
        if L.shape[1] == 0 or np.linalg.norm(h) <= 1e-12 * max(1.0, np.linalg.norm(g)):
            return None
        lam0 = L @ (h / (h @ h))
        L2 = L @ _null_basis(h.reshape(1, -1))
        k2 = L2.shape[1]
        T = np.zeros((K + 1, k2 + 1))
        T[:K, :k2] = -L2
        T[K, k2] = -1.0
        weights = np.concatenate([lam0, [0.0]])
        blocks = []
        for (rows, cols, atoms, vals), n in zip(ent, sizes):
            d = np.arange(n)
            blocks.append(SdpBlock.from_atoms(n, np.r_[rows, d], np.r_[cols, d], np.r_[atoms, np.full(n, K)],
                                              np.r_[vals, np.ones(n)], atom_weights=weights))
        blocks.append(SdpBlock.from_atoms(1, [0], [0], [K], [1.0], C=np.ones((1, 1))))
        bvec = np.zeros(k2 + 1)
        bvec[k2] = -1.0
        sol = solve(SdpProblem(blocks, bvec, natoms=K + 1, T=T), opts or SolverOptions(gap_tol=1e-9, max_iter=100))
        t = float(sol.y[k2])
        if not np.isfinite(t) or t > tol:
            return None
        lam = lam0 + L2 @ sol.y[:k2]
        Ws = []
        for (rows, cols, atoms, vals), n in zip(ent, sizes):
            W = np.zeros((n, n))
            np.add.at(W, (rows, cols), vals * lam[atoms])
            Ws.append(0.5 * (W + W.T))
        return t, Ws

    def _facial_round_sdp(self, tol: float, opts=None) -> int:
        found = self.reducing_certificate(tol, opts)
        if found is None:
            return 0
        t, Ws = found
        removed = 0
        keep_blocks = []
        for b, W in enumerate(Ws):
            n = W.shape[0]
            ev, vec = np.linalg.eigh(W)
            cut = max(FACE_EIG_TOL, 1e3 * abs(t))
            Z = vec[:, ev <= cut]
            removed += n - Z.shape[1]
            if Z.shape[1] == 0:
                continue
            keep_blocks.append(b)
            if Z.shape[1] < n:
                P = self.projection(b)
                self.projections[b] = Z if P is None else P @ Z
        self._keep_blocks(keep_blocks)
        return removed

    def _keep_blocks(self, keep_blocks: List[int]) -> None:
        if len(keep_blocks) == len(self.blocks):
            return
        remap = {b: k for k, b in enumerate(keep_blocks)}
        self.blocks = [self.blocks[b] for b in keep_blocks]
        self.block_weights = [self.block_weights[b] for b in keep_blocks]
        self.projections = [self.projections[b] for b in keep_blocks]
        self.sos_polys = {k: [remap[b] for b in v if b in remap] for k, v in self.sos_polys.items()}

    def check_representable(self) -> None:
        for con in self.matching_constraints():
            if not con.gram_terms and not con.rhs_coeffs and abs(con.rhs_constant) > 0.0:
                raise UnrepresentableMonomial(con.monomial, self.names)

    def dump(self) -> str:
        return "\n".join(c.describe(self.names, self.var_names) for c in self.matching_constraints())

    def to_sdp(self, rank_tol: float = 1e-10) -> Tuple[SdpProblem, "SdpRecovery"]:
        """Eliminate the free variables and return the block LMI problem.

        Matching reads ``E(Q) = phi + B u``.  With ``N`` an orthonormal basis of
        ``null(B^T)`` the Gram matrices must satisfy ``N^T E(Q) = N^T phi`` and the
        objective is ``c^T u = w^T (E(Q) - phi)`` where ``B^T w = c``.
        """
        self.check_representable()
        monos, index, phi, B = self._affine_data()
        K = len(monos)
        c = np.zeros(self.n_vars)
        c[self.objective_var] = 1.0

        U_s, sing, Vt = np.linalg.svd(B, full_matrices=True)
        smax = sing[0] if sing.size else 0.0
        rank = int(np.sum(sing > rank_tol * max(smax, 1.0)))
        Ur = U_s[:, :rank]
        N = U_s[:, rank:]
        Vr = Vt[:rank].T
        sr = sing[:rank]
        if np.linalg.norm(c - Vr @ (Vr.T @ c)) > 1e-8:
            raise ValueError("objective is unbounded: the bounded variable lies in a null direction")
        w = Ur @ ((Vr.T @ c) / sr)

        blocks = []
        for b in range(len(self.blocks)):
            rows, cols, atoms, vals = self.block_entries(b, index)
            blocks.append(SdpBlock.from_atoms(self.reduced_size(b), rows, cols, atoms, vals, atom_weights=w))
        prob = SdpProblem(blocks, N.T @ phi, natoms=K, T=N)
        rec = SdpRecovery(monos, phi, w, Ur, sr, Vr, N)
        return prob, rec


@dataclass
class SdpRecovery:
    """Maps an SDP solution back to program quantities."""

    monomials: List[Monomial]
    phi: np.ndarray
    w: np.ndarray
    Ur: np.ndarray
    sr: np.ndarray
    Vr: np.ndarray
    N: np.ndarray

    def gram_image(self, prob: SdpProblem, X: Sequence[np.ndarray]) -> np.ndarray:
        return prob.atom_apply(X)

    def decision_values(self, prob: SdpProblem, X: Sequence[np.ndarray]) -> np.ndarray:
        e = prob.atom_apply(X) - self.phi
        return self.Vr @ ((self.Ur.T @ e) / self.sr)

    def objective(self, prob: SdpProblem, X: Sequence[np.ndarray]) -> float:
        return float(self.w @ (prob.atom_apply(X) - self.phi))


def s_procedure(certified: LinearPolyExpr, cset: SemialgebraicSet, mult_degree, builder: ProgramBuilder,
                group=None, label: str = "",
                reducer: Optional[EqualityReducer] = None) -> Tuple[LinearPolyExpr, List[int]]:
    """Localize ``certified >= 0`` to ``cset``.

    Each inequality ``g`` gets an SOS multiplier block (weight ``g``) and each
    equality ``h`` a free multiplier ``r``; the returned expression is
    ``certified - sum r_j h_j`` (the SOS parts live in the builder's blocks).
    ``mult_degree`` is one integer or a sequence (inequalities then equalities).
    With a ``reducer`` the equalities are handled by working modulo their ideal
    instead: no ``r_j`` is created and multiplier bases use standard monomials.
    """
    group = group or [(1,) * certified.nvars]
    cons = list(cset.inequalities) + list(cset.equalities)
    if isinstance(mult_degree, (int, np.integer)):
        degrees = [int(mult_degree)] * len(cons)
    else:
        degrees = list(mult_degree)
        if len(degrees) != len(cons):
            raise DegreeBookkeepingError("need one multiplier degree per constraint")
    new_blocks: List[int] = []
    expr = certified
    n_in = len(cset.inequalities)
    for k, (poly, deg) in enumerate(zip(cons, degrees)):
        if k < n_in:
            if deg < 0 or deg % 2:
                raise DegreeBookkeepingError(f"SOS multiplier degree must be even and non-negative, got {deg}")
            if _signs_of_group(poly, group) != {(1,) * len(group)}:
                raise DegreeBookkeepingError("inequality constraint is not invariant under the symmetry group")
            basis = monomial_basis(certified.nvars, deg // 2)
            if reducer is not None:
                basis = [m for m in basis if reducer.is_standard(m)]
            for part in split_basis(basis, group):
                new_blocks.append(builder.add_block(part, poly, owner=f"s{label}{k}"))
        else:
            if deg < 0 or reducer is not None:
                continue
            target = tuple(s for s in poly_signature(poly, group))
            monos = [m for m in monomial_basis(certified.nvars, deg) if signature(m, group) == target]
            r = builder.free_poly(f"r{label}{k - n_in}", monos)
            expr = expr - r.times(poly)
    return expr, new_blocks


def _signs_of_group(p: Polynomial, group) -> set:
    return {signature(m, group) for m, _ in p.items()}
