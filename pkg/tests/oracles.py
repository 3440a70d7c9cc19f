"""Independent reference computations used by the tests.

Nothing here calls the package's solver: the SDP oracle is a first-order
augmented-Lagrangian (alternating direction) method built from PSD
projections, and the SDPA reader feeds cvxpy directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np


@dataclass
class PlantedSdp:
    C: List[np.ndarray]
    A: List[List[np.ndarray]]
    b: np.ndarray
    X0: List[np.ndarray]
    y0: np.ndarray


def _rand_sym(rng, n):
    M = rng.standard_normal((n, n))
    return (M + M.T) / (2.0 * np.sqrt(n))


def _rand_pd(rng, n, floor=0.5):
    B = rng.standard_normal((n, n))
    return B @ B.T / n + floor * np.eye(n)


def planted_sdp(rng: np.random.Generator, max_m: int = 20, max_blocks: int = 3, max_size: int = 15) -> PlantedSdp:
    """Block SDP with strictly feasible primal ``X0`` and dual slack ``S0`` planted."""
    nb = int(rng.integers(1, max_blocks + 1))
    sizes = [int(s) for s in rng.integers(1, max_size + 1, size=nb)]
    dim = sum(n * (n + 1) // 2 for n in sizes)
    m = int(rng.integers(1, min(max_m, dim) + 1))
    A = [[_rand_sym(rng, n) for n in sizes] for _ in range(m)]
    X0 = [_rand_pd(rng, n) for n in sizes]
    b = np.array([sum(float(np.vdot(Aik, Xk)) for Aik, Xk in zip(Ai, X0)) for Ai in A])
    y0 = rng.standard_normal(m)
    C = [_rand_pd(rng, n) + sum(y0[i] * A[i][k] for i in range(m)) for k, n in enumerate(sizes)]
    return PlantedSdp(C, A, b, X0, y0)


def _psd_part(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.maximum(w, 0.0)) @ V.T


def augmented_lagrangian_sdp(C: Sequence[np.ndarray], A: Sequence[Sequence[np.ndarray]], b: np.ndarray,
                             mu: float = 1.0, max_iter: int = 200000, tol: float = 1e-10,
                             adapt: bool = True) -> float:
    """``min <C, X> s.t. <A_i, X> = b_i, X PSD`` by alternating directions on the
    augmented Lagrangian of the dual (penalty ``1/mu`` on ``C - A*y - S``).

    Each sweep solves for ``y`` exactly, projects onto the PSD cone for ``S``
    and takes the multiplier step ``X = (S - V) / mu``.  ``mu`` is balanced
    between primal and dual residuals.  Returns ``<C, X>``.
    """
    sizes = [Ck.shape[0] for Ck in C]
    nb = len(sizes)
    m = len(b)
    offs = np.cumsum([0] + [n * n for n in sizes])
    Af = np.array([np.concatenate([Ai[k].ravel() for k in range(nb)]) for Ai in A]).reshape(m, -1)
    Cf = np.concatenate([Ck.ravel() for Ck in C])
    AAt = np.linalg.cholesky(Af @ Af.T)
    x = np.concatenate([np.eye(n).ravel() for n in sizes])
    sv = np.zeros_like(x)
    bn, cn = 1.0 + np.linalg.norm(b), 1.0 + np.linalg.norm(Cf)

    def solve_aat(r):
        return np.linalg.solve(AAt.T, np.linalg.solve(AAt, r))

    for it in range(max_iter):
        y = solve_aat(-(mu * (Af @ x - b) + Af @ (sv - Cf)))
        v = Cf - Af.T @ y - mu * x
        sv = np.concatenate([_psd_part(v[offs[k]:offs[k + 1]].reshape(n, n)).ravel() for k, n in enumerate(sizes)])
        x = (sv - v) / mu
        if it % 10 == 0:
            pres = np.linalg.norm(Af @ x - b) / bn
            dres = np.linalg.norm(Cf - Af.T @ y - sv) / cn
            gap = abs(Cf @ x - b @ y) / (1.0 + abs(Cf @ x) + abs(b @ y))
            if max(pres, dres, gap) <= tol:
                break
            if adapt and pres > 10 * dres:
                mu *= 1.6
            elif adapt and dres > 10 * pres:
                mu /= 1.6
    return float(Cf @ x)


@dataclass
class SdpaData:
    c: np.ndarray
    F: List[List[np.ndarray]]  # F[i][k], i = 0..m


def read_sdpa(text: str) -> SdpaData:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith(("*", '"'))]
    m = int(lines[0].split()[0])
    nb = int(lines[1].split()[0])
    sizes = [abs(int(float(t))) for t in lines[2].replace(",", " ").split()[:nb]]
    c = np.array([float(t) for t in lines[3].replace(",", " ").split()[:m]])
    F = [[np.zeros((n, n)) for n in sizes] for _ in range(m + 1)]
    for ln in lines[4:]:
        mat, blk, i, j, v = ln.split()
        M = F[int(mat)][int(blk) - 1]
        M[int(i) - 1, int(j) - 1] = float(v)
        M[int(j) - 1, int(i) - 1] = float(v)
    return SdpaData(c, F)


def cvxpy_sdpa_optimum(data: SdpaData) -> float:
    """``min c^T x s.t. sum_i F_i x_i - F_0 PSD`` with cvxpy and Clarabel."""
    import cvxpy as cp

    m = data.c.size
    x = cp.Variable(m)
    cons = []
    for k in range(len(data.F[0])):
        expr = -data.F[0][k]
        for i in range(m):
            if np.any(data.F[i + 1][k]):
                expr = expr + x[i] * data.F[i + 1][k]
        cons.append((expr + expr.T) / 2 >> 0)
    prob = cp.Problem(cp.Minimize(data.c @ x), cons)
    prob.solve(solver="CLARABEL")
    return float(prob.value)
