"""Pure numpy versions of the compiled kernels (same signatures and semantics)."""

import numpy as np
import scipy.sparse as sp

_CHUNK = 512


def schur_accumulate(M, X, Sinv, rows, cols, atoms, vals):
    """M[a1, a2] += v1 v2 X[j1, i2] Sinv[i1, j2] over all entry pairs of one block."""
    nnz = rows.size
    if nnz == 0:
        return
    K = M.shape[0]
    P = sp.csr_matrix((vals, (np.arange(nnz), atoms)), shape=(nnz, K))
    Xr = X[:, rows]          # X[j, i2] for all i2 -> index rows later by j1
    Sr = Sinv[:, cols]       # Sinv[i, j2]
    for start in range(0, nnz, _CHUNK):
        stop = min(start + _CHUNK, nnz)
        G = Xr[cols[start:stop]] * Sr[rows[start:stop]]
        H = (P.T @ G.T).T    # (chunk, K)
        Pc = P[start:stop]
        M += (Pc.T @ H)


def rk4_run(exps, coeffs, comp, maxdeg, phi_exps, phi_coeffs, state, dt, n_skip, n_avg, bound, traj):
    nens, d = state.shape
    ncomp = d
    exps_f = exps.astype(float)
    phi_exps_f = phi_exps.astype(float)
    A = np.zeros((coeffs.size, ncomp))
    if coeffs.size:
        A[np.arange(coeffs.size), comp] = coeffs
    nphi = phi_coeffs.size

    def field(x):
        pw = np.prod(x[:, None, :] ** exps_f[None, :, :], axis=2)
        return pw @ A

    def phi(x):
        pw = np.prod(x[:, None, :] ** phi_exps_f[None, :, :], axis=2)
        return pw @ phi_coeffs

    x = state.copy()
    alive = np.ones(nens, dtype=bool)
    escape = np.full(nens, -1, dtype=np.int64)
    acc = np.zeros(nens)
    total = n_skip + n_avg
    record = traj.shape[0] > 0
    if record:
        traj[0] = x[0]
    h2, h6 = 0.5 * dt, dt / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(total + 1):
            if s >= n_skip and nphi:
                w = 0.5 if s in (n_skip, total) else 1.0
                acc[alive] += w * phi(x[alive])
            if s == total:
                break
            xa = x[alive]
            k1 = field(xa)
            k2 = field(xa + h2 * k1)
            k3 = field(xa + h2 * k2)
            k4 = field(xa + dt * k3)
            xa = xa + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            x[alive] = xa
            if record and alive[0]:
                traj[s + 1] = x[0]
            nrm = np.sqrt(np.sum(xa * xa, axis=1))
            bad = ~(nrm <= bound)
            if bad.any():
                idx = np.flatnonzero(alive)[bad]
                escape[idx] = s + 1
                alive[idx] = False
                if not alive.any():
                    break
    state[:] = x
    averages = acc / n_avg if n_avg > 0 else np.zeros(nens)
    averages[escape >= 0] = 0.0 if n_avg > 0 else averages[escape >= 0]
    return averages, escape
