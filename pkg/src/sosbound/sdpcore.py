"""Block-diagonal semidefinite programs and a primal-dual interior-point solver.

Native form (LMI)::

    max  b^T y   s.t.  S = C - sum_i y_i A_i  is PSD

with dual (Gram) form ``min <C, X>  s.t. <A_i, X> = b_i, X PSD``.

Constraint matrices are stored through *atoms*: sparse symmetric matrices
``E_a`` per block, combined as ``A_i = sum_a T[a, i] E_a``.  For plain problems
``T`` is the identity; SOS programs use one atom per monomial and a dense
``T`` that eliminates free variables.  The Schur complement is assembled in
atom space by :func:`sosbound.kernels.schur_accumulate` and then projected.
"""

from __future__ import annotations

import enum
import io
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, TextIO, Tuple

import numpy as np
import scipy.linalg as sla

from . import kernels

SYM_TOL = 1e-12


class SolverStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SdpBlock:
    """One diagonal block: dense ``C`` plus sparse atom entries (full, both triangles)."""

    size: int
    C: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    atoms: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_atoms(cls, size, rows, cols, atoms, vals, atom_weights=None, C=None) -> "SdpBlock":
        rows = np.asarray(rows, dtype=np.int32)
        cols = np.asarray(cols, dtype=np.int32)
        atoms = np.asarray(atoms, dtype=np.int32)
        vals = np.asarray(vals, dtype=float)
        order = np.lexsort((cols, rows, atoms))
        rows, cols, atoms, vals = rows[order], cols[order], atoms[order], vals[order]
        if C is None:
            C = np.zeros((size, size))
            if atom_weights is not None:
                np.add.at(C, (rows, cols), vals * np.asarray(atom_weights)[atoms])
        return cls(size, np.asarray(C, dtype=float), rows, cols, atoms, vals)

    def combine(self, t: np.ndarray) -> np.ndarray:
        """``sum_a t[a] E_a`` as a dense matrix."""
        n = self.size
        flat = np.bincount(self.rows.astype(np.int64) * n + self.cols, weights=self.vals * t[self.atoms],
                           minlength=n * n)
        return flat.reshape(n, n)

    def apply(self, W: np.ndarray, natoms: int) -> np.ndarray:
        """``<E_a, W>`` for every atom."""
        return np.bincount(self.atoms, weights=self.vals * W[self.rows, self.cols], minlength=natoms)

    def dense_atoms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Atoms present in the block and their ``E_a`` as a dense stack."""
        cached = getattr(self, "_dense", None)
        if cached is None:
            ua, local = np.unique(self.atoms, return_inverse=True)
            E = np.zeros((ua.size, self.size, self.size))
            np.add.at(E, (local, self.rows, self.cols), self.vals)
            cached = (ua, E)
            object.__setattr__(self, "_dense", cached)
        return cached

    def prefers_dense(self) -> bool:
        """Pairwise entry accumulation costs ``nnz^2``; the batched product ``na n^2 (2n + na)``."""
        na = np.unique(self.atoms).size
        n = self.size
        return float(self.vals.size) ** 2 > 4.0 * na * n * n * (2 * n + na)

    def schur_dense(self, M: np.ndarray, X: np.ndarray, Sinv: np.ndarray) -> None:
        ua, E = self.dense_atoms()
        XES = np.matmul(np.matmul(X, E), Sinv)
        flat = E.reshape(ua.size, -1)
        M[np.ix_(ua, ua)] += flat @ XES.reshape(ua.size, -1).T


@dataclass
class SdpProblem:
    blocks: List[SdpBlock]
    b: np.ndarray
    natoms: int
    T: Optional[np.ndarray] = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if not self.blocks:
            raise ValueError("an SDP needs at least one block")
        if self.T is not None:
            self.T = np.asarray(self.T, dtype=float)
            if self.T.shape != (self.natoms, self.b.size):
                raise ValueError("atom transform has the wrong shape")
        elif self.natoms != self.b.size:
            raise ValueError("without a transform every atom is a variable")
        for blk in self.blocks:
            if blk.C.shape != (blk.size, blk.size):
                raise ValueError("C block has the wrong size")
            if np.max(np.abs(blk.C - blk.C.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(blk.C), initial=0.0)):
                raise ValueError("C block is not symmetric")
            if blk.rows.size and (blk.rows.max() >= blk.size or blk.cols.max() >= blk.size):
                raise ValueError("atom entry outside its block")

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def block_sizes(self) -> List[int]:
        return [blk.size for blk in self.blocks]

    @classmethod
    def from_dense(cls, C: Sequence[np.ndarray], A: Sequence[Sequence[np.ndarray]], b) -> "SdpProblem":
        """``C[k]`` per block, ``A[i][k]`` for variable ``i`` and block ``k``."""
        b = np.asarray(b, dtype=float)
        m = b.size
        if len(A) != m:
            raise ValueError("need one list of block matrices per variable")
        blocks = []
        for k, Ck in enumerate(C):
            Ck = np.atleast_2d(np.asarray(Ck, dtype=float))
            n = Ck.shape[0]
            rows, cols, atoms, vals = [], [], [], []
            for i in range(m):
                Ai = np.atleast_2d(np.asarray(A[i][k], dtype=float))
                if Ai.shape != (n, n):
                    raise ValueError(f"A[{i}][{k}] has shape {Ai.shape}, expected {(n, n)}")
                if np.max(np.abs(Ai - Ai.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(Ai), initial=0.0)):
                    raise ValueError(f"A[{i}][{k}] is not symmetric")
                r, c = np.nonzero(Ai)
                rows.extend(r); cols.extend(c); atoms.extend([i] * len(r)); vals.extend(Ai[r, c])
            blocks.append(SdpBlock.from_atoms(n, rows, cols, atoms, vals, C=Ck))
        return cls(blocks, b, natoms=m)

    # linear maps --------------------------------------------------------------
    def atom_apply(self, W: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.natoms)
        for blk, Wk in zip(self.blocks, W):
            out += blk.apply(Wk, self.natoms)
        return out

    def apply(self, W: Sequence[np.ndarray]) -> np.ndarray:
        """``<A_i, W>`` for all ``i``."""
        e = self.atom_apply(W)
        return e if self.T is None else self.T.T @ e

    def adjoint(self, y: np.ndarray) -> List[np.ndarray]:
        """``sum_i y_i A_i`` per block."""
        t = y if self.T is None else self.T @ y
        return [blk.combine(t) for blk in self.blocks]

    def C_blocks(self) -> List[np.ndarray]:
        return [blk.C for blk in self.blocks]

    def A_dense(self, i: int) -> List[np.ndarray]:
        e = np.zeros(self.m)
        e[i] = 1.0
        return self.adjoint(e)

    def A_norms(self) -> np.ndarray:
        """Frobenius norms of the ``A_i`` via the atom Gram matrix."""
        G = np.zeros((self.natoms, self.natoms))
        for blk in self.blocks:
            n = blk.size
            key = blk.rows.astype(np.int64) * n + blk.cols
            order = np.argsort(key, kind="stable")
            key_s = key[order]
            starts = np.flatnonzero(np.r_[True, key_s[1:] != key_s[:-1]])
            groups = np.split(order, starts[1:])
            for g in groups:
                a = blk.atoms[g]
                v = blk.vals[g]
                np.add.at(G, (a[:, None], a[None, :]), v[:, None] * v[None, :])
        if self.T is None:
            return np.sqrt(np.maximum(np.diag(G), 0.0))
        return np.sqrt(np.maximum(np.einsum("ai,ab,bi->i", self.T, G, self.T), 0.0))


@dataclass
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.9
    divergence: float = 1e10
    refine_steps: int = 5
    polish: bool = True
    polish_thresholds: Tuple[float, ...] = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
    direction: str = "hkm"
    retry_other_direction: bool = True
    log: Optional[TextIO] = None

    def __post_init__(self):
        if self.direction not in ("hkm", "nt"):
            raise ValueError(f"direction must be 'hkm' or 'nt', got {self.direction!r}")


@dataclass
class IterationRecord:
    iteration: int
    primal_objective: float
    dual_objective: float
    gap: float
    rel_gap: float
    primal_infeas: float
    dual_infeas: float
    step_primal: float
    step_dual: float

    def line(self) -> str:
        return (f"{self.iteration:4d} {self.primal_objective: .10e} {self.dual_objective: .10e} "
                f"{self.gap: .3e} {self.primal_infeas: .2e} {self.dual_infeas: .2e} "
                f"{self.step_primal:.3f} {self.step_dual:.3f}")


LOG_HEADER = "iter  primal_obj(<C,X>)   dual_obj(b'y)      gap        pinf      dinf      ap    ad"


@dataclass
class SdpSolution:
    """``primal_objective = <C, X>``; ``dual_objective = b^T y``; ``gap`` is their difference."""

    y: np.ndarray
    X: List[np.ndarray]
    S: List[np.ndarray]
    primal_objective: float
    dual_objective: float
    gap: float
    rel_gap: float
    primal_infeas: float
    dual_infeas: float
    status: SolverStatus
    iterations: int
    history: List[IterationRecord] = field(default_factory=list)
    solve_time: float = 0.0

    def summary(self) -> str:
        return (f"status={self.status.value} iter={self.iterations} pobj={self.primal_objective:.10g} "
                f"dobj={self.dual_objective:.10g} relgap={self.rel_gap:.2e} "
                f"pinf={self.primal_infeas:.2e} dinf={self.dual_infeas:.2e}")


def _inner(A: Sequence[np.ndarray], B: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(a, b) for a, b in zip(A, B)))


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _max_step(L: np.ndarray, D: np.ndarray) -> float:
    """Largest ``a`` with ``LL^T + a D`` PSD (``inf`` when ``D`` is PSD)."""
    Z = sla.solve_triangular(L, D, lower=True)
    Z = sla.solve_triangular(L, Z.T, lower=True)
    lam = np.linalg.eigvalsh(_sym(Z))[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _chol(M: np.ndarray) -> Optional[np.ndarray]:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None


def _nt_scaling(LS: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``W`` with ``W S W = X`` for ``S = LS LS^T``."""
    w, V = np.linalg.eigh(_sym(LS.T @ X @ LS))
    Li = sla.solve_triangular(LS, np.eye(LS.shape[0]), lower=True)
    R = (V * np.sqrt(np.sqrt(np.maximum(w, 0.0)))).T @ Li
    return _sym(R.T @ R)


def _measure(prob: SdpProblem, C: Sequence[np.ndarray], X, y, S, rec: IterationRecord) -> IterationRecord:
    """Objectives, gap and residuals of an iterate in the units of ``prob``."""
    pobj = _inner(C, X)
    dobj = float(prob.b @ y) if prob.m else 0.0
    gap = pobj - dobj
    rel_gap = abs(gap) / max(1.0, 0.5 * (abs(pobj) + abs(dobj)))
    pinf = float(np.linalg.norm(prob.b - prob.apply(X))) / (1.0 + float(np.linalg.norm(prob.b)))
    ATy = prob.adjoint(y)
    Rd = [Ck - Ak - Sk for Ck, Ak, Sk in zip(C, ATy, S)]
    dinf = math.sqrt(_inner(Rd, Rd)) / (1.0 + math.sqrt(_inner(C, C)))
    return IterationRecord(rec.iteration, pobj, dobj, gap, rel_gap, pinf, dinf, rec.step_primal, rec.step_dual)


def _polish(prob: SdpProblem, C: Sequence[np.ndarray], X, y, S, opts: "SolverOptions"):
    """Snap a stalled iterate onto the face spanned by the large eigenvectors of ``X``.

    With ``X_k ~ U_k U_k^T`` (``U_k`` the leading eigenvectors scaled by the
    square roots of their eigenvalues), ``X = U (I + D) U^T`` is made primal
    feasible with the min-norm ``D``; ``y`` is then moved so that ``U^T S U = 0``
    while changing ``S`` as little as possible relative to its own size on the
    complement.  Returns ``(iterate, converged)`` for the candidate with the
    smallest merit, ``converged`` telling whether it passes every optimality
    check at the requested tolerances; None when no candidate keeps ``X`` and
    ``S`` PSD.
    """
    eigs = [np.linalg.eigh(_sym(Xk)) for Xk in X]
    top = max(float(w[-1]) for w, _ in eigs)
    if not top > 0:
        return None
    S0 = [Ck - Ak for Ck, Ak in zip(C, prob.adjoint(y))]
    best = None
    for tau in opts.polish_thresholds:
        Us, Gs, Hs = [], [], []
        for blk, (w, V), Sk in zip(prob.blocks, eigs, S0):
            keep = w > tau * top
            U = V[:, keep] * np.sqrt(w[keep])
            Vc = V[:, ~keep]
            ws, Q = np.linalg.eigh(_sym(Vc.T @ Sk @ Vc))
            Wc = (Vc @ Q) / np.sqrt(np.maximum(ws, 1e-14))
            ua, E = blk.dense_atoms()
            r, c = U.shape[1], Wc.shape[1]
            G = np.zeros((prob.natoms, r * r))
            H = np.zeros((prob.natoms, c * c))
            if r:
                G[ua] = np.einsum("ip,aij,jq->apq", U, E, U, optimize=True).reshape(ua.size, r * r)
            if c:
                H[ua] = np.einsum("ip,aij,jq->apq", Wc, E, Wc, optimize=True).reshape(ua.size, c * c)
            Us.append(U)
            Gs.append(G)
            Hs.append(H)
        G = np.hstack(Gs)
        H = np.hstack(Hs)
        if prob.T is not None:
            G = prob.T.T @ G
            H = prob.T.T @ H
        if G.shape[1] == 0:
            continue
        d, *_ = np.linalg.lstsq(G, prob.b - prob.apply([U @ U.T for U in Us]), rcond=None)
        Xn, off, ok = [], 0, True
        for U in Us:
            r = U.shape[1]
            D = _sym(np.eye(r) + d[off:off + r * r].reshape(r, r))
            off += r * r
            if r and np.linalg.eigvalsh(D)[0] < 0.0:
                ok = False
                break
            Xn.append(U @ D @ U.T)
        if not ok:
            continue
        rhs = np.concatenate([(U.T @ Sk @ U).ravel() for U, Sk in zip(Us, S0)])
        dy, *_ = np.linalg.lstsq(G.T, rhs, rcond=None)
        N = sla.null_space(G.T, rcond=1e-10)
        if N.shape[1] and H.shape[1]:
            z, *_ = np.linalg.lstsq(H.T @ N, -(H.T @ dy), rcond=None)
            dy = dy + N @ z
        yn = y + dy
        Sn = [Ck - Ak for Ck, Ak in zip(C, prob.adjoint(yn))]
        if min(float(np.linalg.eigvalsh(_sym(Sk))[0]) for Sk in Sn) < -opts.feas_tol:
            continue
        rec = _measure(prob, C, Xn, yn, Sn, IterationRecord(0, 0, 0, 0, 0, 0, 0, 0, 0))
        merit = _merit(rec, opts)
        if best is None or merit < best[0]:
            best = (merit, (Xn, yn, Sn, rec))
    if best is None:
        return None
    return best[1], best[0] <= 1.0


def _merit(rec, opts: "SolverOptions") -> float:
    """Worst of the gap and residuals relative to their tolerances (IterationRecord or SdpSolution)."""
    return max(rec.rel_gap / opts.gap_tol, rec.primal_infeas / opts.feas_tol, rec.dual_infeas / opts.feas_tol)


def solve(prob: SdpProblem, opts: Optional[SolverOptions] = None) -> SdpSolution:
    """Infeasible-start path-following with Mehrotra correction.

    A run that stalls (NumericalFailure or MaxIterations) is repeated with the
    other Newton direction (HKM or NT) and the iterate with the better merit
    is returned.
    """
    opts = opts or SolverOptions()
    sol = _solve_once(prob, opts)
    if sol.status not in (SolverStatus.NUMERICAL_FAILURE, SolverStatus.MAX_ITERATIONS) or not opts.retry_other_direction:
        return sol
    other = replace(opts, direction="nt" if opts.direction == "hkm" else "hkm")
    if opts.log is not None:
        opts.log.write(f"retry with direction {other.direction}\n")
    alt = _solve_once(prob, other)
    alt.solve_time += sol.solve_time
    if alt.status is SolverStatus.OPTIMAL or _merit(alt, opts) < _merit(sol, opts):
        return alt
    sol.solve_time = alt.solve_time
    return sol


def _solve_once(prob: SdpProblem, opts: SolverOptions) -> SdpSolution:
    t0 = time.perf_counter()
    blocks = prob.blocks
    nb = len(blocks)
    n_tot = sum(blk.size for blk in blocks)
    m = prob.m
    T = prob.T
    # small data is scaled up to unit norm; residuals in original units can only shrink
    sb = float(np.linalg.norm(prob.b))
    sb = sb if 0.0 < sb < 1.0 else 1.0
    C0 = prob.C_blocks()
    sc = math.sqrt(_inner(C0, C0))
    sc = sc if 0.0 < sc < 1.0 else 1.0
    b = prob.b / sb
    C = [Ck / sc for Ck in C0]
    normA = prob.A_norms() if m else np.zeros(0)
    normC = math.sqrt(_inner(C, C))
    normb = float(np.linalg.norm(b))
    use_dense = [blk.prefers_dense() for blk in blocks]

    xi = max(10.0, math.sqrt(n_tot), n_tot * float(np.max((1.0 + np.abs(b)) / (1.0 + normA), initial=0.0)))
    eta = max(10.0, math.sqrt(n_tot), normC, float(np.max(normA, initial=0.0)))
    X = [xi * np.eye(blk.size) for blk in blocks]
    S = [eta * np.eye(blk.size) for blk in blocks]
    y = np.zeros(m)

    history: List[IterationRecord] = []
    log = opts.log
    if log is not None:
        log.write(LOG_HEADER + "\n")

    best = None
    status = SolverStatus.MAX_ITERATIONS
    stall = 0
    step_p = step_d = 0.0
    it = 0
    for it in range(opts.max_iter + 1):
        ATy = prob.adjoint(y)
        Rd = [Ck - Ak - Sk for Ck, Ak, Sk in zip(C, ATy, S)]
        rp = b - prob.apply(X)
        pobj = _inner(C, X)
        dobj = float(b @ y)
        gap = pobj - dobj
        rel_gap = abs(gap) / max(1.0, 0.5 * (abs(pobj) + abs(dobj)))
        pinf = float(np.linalg.norm(rp)) / (1.0 + normb)
        dinf = math.sqrt(_inner(Rd, Rd)) / (1.0 + normC)
        rec = IterationRecord(it, pobj, dobj, gap, rel_gap, pinf, dinf, step_p, step_d)
        history.append(rec)
        if log is not None:
            log.write(rec.line() + "\n")
        merit = max(rel_gap / opts.gap_tol, pinf / opts.feas_tol, dinf / opts.feas_tol)
        if best is None or merit < best[0]:
            best = (merit, [x.copy() for x in X], y.copy(), [s.copy() for s in S], rec)
        if rel_gap <= opts.gap_tol and pinf <= opts.feas_tol and dinf <= opts.feas_tol:
            status = SolverStatus.OPTIMAL
            break
        normX = math.sqrt(_inner(X, X))
        if float(np.linalg.norm(y)) > opts.divergence and dinf < 1e-3:
            status = SolverStatus.PRIMAL_INFEASIBLE
            break
        if normX > opts.divergence and pinf < 1e-3:
            status = SolverStatus.DUAL_INFEASIBLE
            break
        if it == opts.max_iter:
            status = SolverStatus.MAX_ITERATIONS
            break

        mu = _inner(X, S) / n_tot
        LS = [_chol(Sk) for Sk in S]
        LX = [_chol(Xk) for Xk in X]
        if any(L is None for L in LS) or any(L is None for L in LX):
            status = SolverStatus.NUMERICAL_FAILURE
            break
        Sinv = [sla.cho_solve((L, True), np.eye(L.shape[0])) for L in LS]
        Sinv = [_sym(Si) for Si in Sinv]
        # the Newton system uses dX = sigma mu S^-1 - X - P dS Q with (P, Q) = (X, S^-1) for HKM, (W, W) for NT
        if opts.direction == "nt":
            P = [_nt_scaling(L, Xk) for L, Xk in zip(LS, X)]
            Q = P
        else:
            P, Q = X, Sinv

        ME = np.zeros((prob.natoms, prob.natoms))
        for blk, Pk, Qk, dense in zip(blocks, P, Q, use_dense):
            if dense:
                blk.schur_dense(ME, Pk, Qk)
            else:
                kernels.schur_accumulate(ME, Pk, Qk, blk.rows, blk.cols, blk.atoms, blk.vals)
        M = ME if T is None else T.T @ ME @ T
        M = _sym(M)
        LM = _chol(M)
        if LM is None:
            d = np.diag(M)
            reg = 1e-14 * max(float(np.max(np.abs(d), initial=1.0)), 1.0)
            for _ in range(8):
                LM = _chol(M + reg * np.eye(m))
                if LM is not None:
                    break
                reg *= 100
        if LM is None:
            status = SolverStatus.NUMERICAL_FAILURE
            break

        def schur_op(v):
            Av = prob.adjoint(v)
            return prob.apply([_sym(Pk @ Ak @ Qk) for Pk, Ak, Qk in zip(P, Av, Q)])

        def solve_M(r):
            # refinement against the exact operator; the formed M loses accuracy near the optimum
            v = sla.cho_solve((LM, True), r)
            rn = float(np.linalg.norm(r))
            for _ in range(opts.refine_steps):
                res = r - schur_op(v)
                if float(np.linalg.norm(res)) <= 1e-14 * max(rn, 1e-300):
                    break
                v = v + sla.cho_solve((LM, True), res)
            return v

        base_rhs = b + prob.apply([_sym(Pk @ Rk @ Qk) for Pk, Rk, Qk in zip(P, Rd, Q)])
        Asinv = prob.apply(Sinv)

        def direction(sigma_mu, corr=None):
            rhs = base_rhs - sigma_mu * Asinv
            if corr is not None:
                rhs = rhs + prob.apply(corr)
            dy = solve_M(rhs)
            ATdy = prob.adjoint(dy)
            dS = [Rk - Ak for Rk, Ak in zip(Rd, ATdy)]
            dX = []
            for k in range(nb):
                D = sigma_mu * Sinv[k] - X[k] - P[k] @ dS[k] @ Q[k]
                if corr is not None:
                    D = D - corr[k]
                dX.append(_sym(D))
            return dy, dX, dS

        def steps(dX, dS):
            ap = min((_max_step(L, D) for L, D in zip(LX, dX)), default=math.inf)
            ad = min((_max_step(L, D) for L, D in zip(LS, dS)), default=math.inf)
            return ap, ad

        dy, dX, dS = direction(0.0)
        ap, ad = steps(dX, dS)
        ap_ = min(1.0, ap)
        ad_ = min(1.0, ad)
        mu_aff = _inner([Xk + ap_ * Dk for Xk, Dk in zip(X, dX)], [Sk + ad_ * Dk for Sk, Dk in zip(S, dS)]) / n_tot
        expon = 3.0 if min(ap_, ad_) > 0.2 else 2.0
        sigma = min(1.0, max(0.0, (mu_aff / mu)) ** expon)
        corr = [_sym(Dx @ Ds @ Si) for Dx, Ds, Si in zip(dX, dS, Sinv)]
        dy, dX, dS = direction(sigma * mu, corr)
        ap, ad = steps(dX, dS)
        gamma = max(opts.step_fraction, 0.9 + 0.09 * min(ap_, ad_))
        gamma = min(gamma, 0.995)
        step_p = min(1.0, gamma * ap)
        step_d = min(1.0, gamma * ad)
        if not (np.isfinite(step_p) and np.isfinite(step_d)):
            status = SolverStatus.NUMERICAL_FAILURE
            break
        X = [Xk + step_p * Dk for Xk, Dk in zip(X, dX)]
        y = y + step_d * dy
        S = [Sk + step_d * Dk for Sk, Dk in zip(S, dS)]
        if max(step_p, step_d) < 1e-8:
            stall += 1
            if stall >= 3:
                status = SolverStatus.NUMERICAL_FAILURE
                break
        else:
            stall = 0

    if status is not SolverStatus.OPTIMAL and best is not None:
        _, X, y, S, rec = best
    if sb != 1.0 or sc != 1.0:
        X = [sb * Xk for Xk in X]
        y = sc * y
        S = [sc * Sk for Sk in S]
    rec = _measure(prob, C0, X, y, S, rec)
    if status in (SolverStatus.NUMERICAL_FAILURE, SolverStatus.MAX_ITERATIONS) and opts.polish:
        polished = _polish(prob, C0, X, y, S, opts)
        # a polished iterate that improves but does not converge keeps the failure status
        if polished is not None and (polished[1] or _merit(polished[0][3], opts) < _merit(rec, opts)):
            (X, y, S, prec), converged = polished
            rec = IterationRecord(rec.iteration, prec.primal_objective, prec.dual_objective, prec.gap,
                                  prec.rel_gap, prec.primal_infeas, prec.dual_infeas, rec.step_primal,
                                  rec.step_dual)
            if converged:
                status = SolverStatus.OPTIMAL
            if log is not None:
                log.write("polished: " + rec.line() + "\n")
    return SdpSolution(y=y, X=X, S=S, primal_objective=rec.primal_objective, dual_objective=rec.dual_objective,
                       gap=rec.gap, rel_gap=rec.rel_gap, primal_infeas=rec.primal_infeas,
                       dual_infeas=rec.dual_infeas, status=status, iterations=it, history=history,
                       solve_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# SDPA export


def _fmt(v: float) -> str:
    return repr(float(v))


def export_sdpa(prob: SdpProblem, path) -> None:
    """Write ``prob`` in sparse SDPA format (``.dat-s``).

    SDPA solves ``min c^T x s.t. sum_i F_i x_i - F_0 PSD``; with ``c = -b``,
    ``F_0 = -C`` and ``F_i = -A_i`` that is exactly ``max b^T y s.t. C - sum y_i A_i PSD``.
    Only upper-triangular nonzeros are written, blocks and entries in order.
    """
    text = sdpa_text(prob)
    if hasattr(path, "write"):
        path.write(text)
        return
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def sdpa_text(prob: SdpProblem) -> str:
    out = io.StringIO()
    out.write(f"{prob.m}\n")
    out.write(f"{len(prob.blocks)}\n")
    out.write(" ".join(str(blk.size) for blk in prob.blocks) + "\n")
    out.write(" ".join(_fmt(-v) for v in prob.b) + "\n")
    mats = [[-Ck for Ck in prob.C_blocks()]]
    for i in range(prob.m):
        mats.append([-Ak for Ak in prob.A_dense(i)])
    for matno, blocks in enumerate(mats):
        for blkno, M in enumerate(blocks, start=1):
            iu, ju = np.triu_indices(M.shape[0])
            vals = M[iu, ju]
            for i, j, v in zip(iu[vals != 0], ju[vals != 0], vals[vals != 0]):
                out.write(f"{matno} {blkno} {i + 1} {j + 1} {_fmt(v)}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# certificate checks


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e})"


@dataclass
class CertificateReport:
    checks: List[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        return "\n".join(c.line() for c in self.checks)


def check_certificate(prob: SdpProblem, sol: SdpSolution, psd_floor: float = -1e-7,
                      feas_tol: float = 1e-7, gap_tol: float = 1e-7) -> CertificateReport:
    """Recompute slack, residuals and gap from dense matrices, independent of the solver."""
    m = prob.m
    C = prob.C_blocks()
    A = [prob.A_dense(i) for i in range(m)]
    slack = []
    for k, Ck in enumerate(C):
        Sk = Ck.copy()
        for i in range(m):
            Sk = Sk - sol.y[i] * A[i][k]
        slack.append(Sk)
    min_slack = min(float(np.linalg.eigvalsh(_sym(Sk))[0]) for Sk in slack)
    min_X = min(float(np.linalg.eigvalsh(_sym(Xk))[0]) for Xk in sol.X)
    scale_x = max(1.0, max(float(np.max(np.abs(Xk))) for Xk in sol.X))
    scale_s = max(1.0, max(float(np.max(np.abs(Sk))) for Sk in slack))
    residual = np.array([sum(float(np.vdot(A[i][k], sol.X[k])) for k in range(len(C))) for i in range(m)]) - prob.b
    pres = float(np.linalg.norm(residual)) / (1.0 + float(np.linalg.norm(prob.b)))
    cx = sum(float(np.vdot(Ck, Xk)) for Ck, Xk in zip(C, sol.X))
    by = float(prob.b @ sol.y)
    rel_gap = abs(cx - by) / max(1.0, 0.5 * (abs(cx) + abs(by)))
    return CertificateReport([
        Check("slack min eigenvalue", min_slack / scale_s, abs(psd_floor), min_slack / scale_s >= psd_floor),
        Check("X min eigenvalue", min_X / scale_x, abs(psd_floor), min_X / scale_x >= psd_floor),
        Check("primal residual", pres, feas_tol, pres <= feas_tol),
        Check("relative gap", rel_gap, gap_tol, rel_gap <= gap_tol),
    ])
