# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: Schur complement assembly and RK4 on polynomial fields."""

from libc.math cimport sqrt, isfinite
import numpy as np
cimport numpy as cnp

cnp.import_array()


def schur_accumulate(double[:, ::1] M, const double[:, ::1] X, const double[:, ::1] Sinv,
                     const int[::1] rows, const int[::1] cols, const int[::1] atoms,
                     const double[::1] vals):
    """M[a1, a2] += v1 v2 X[j1, i2] Sinv[i1, j2] over all entry pairs of one block."""
    cdef Py_ssize_t nnz = rows.shape[0]
    cdef Py_ssize_t e1, e2
    cdef int i1, j1, a1
    cdef double v1
    cdef const double* xrow
    cdef const double* srow
    cdef double* mrow
    cdef const int* r2 = &rows[0] if nnz else NULL
    cdef const int* c2 = &cols[0] if nnz else NULL
    cdef const int* a2 = &atoms[0] if nnz else NULL
    cdef const double* v2 = &vals[0] if nnz else NULL
    with nogil:
        for e1 in range(nnz):
            i1 = rows[e1]
            j1 = cols[e1]
            a1 = atoms[e1]
            v1 = vals[e1]
            xrow = &X[j1, 0]
            srow = &Sinv[i1, 0]
            mrow = &M[a1, 0]
            for e2 in range(nnz):
                mrow[a2[e2]] += v1 * v2[e2] * xrow[r2[e2]] * srow[c2[e2]]


cdef inline void _field(const double* x, double* out, double* powtab, Py_ssize_t d, int maxdeg,
                        Py_ssize_t nterms, const int* exps, const double* coeffs,
                        const int* comp, Py_ssize_t ncomp) noexcept nogil:
    cdef Py_ssize_t k, t
    cdef int e
    cdef double v
    cdef int stride = maxdeg + 1
    for k in range(d):
        powtab[k * stride] = 1.0
        for e in range(1, stride):
            powtab[k * stride + e] = powtab[k * stride + e - 1] * x[k]
    for k in range(ncomp):
        out[k] = 0.0
    for t in range(nterms):
        v = coeffs[t]
        for k in range(d):
            e = exps[t * d + k]
            if e:
                v *= powtab[k * stride + e]
        out[comp[t]] += v


cdef inline void _phi(const double* x, double* out, double* powtab, Py_ssize_t d, int maxdeg,
                      Py_ssize_t nterms, const int* exps, const double* coeffs) noexcept nogil:
    cdef Py_ssize_t k, t
    cdef int e
    cdef double v, total = 0.0
    cdef int stride = maxdeg + 1
    for k in range(d):
        powtab[k * stride] = 1.0
        for e in range(1, stride):
            powtab[k * stride + e] = powtab[k * stride + e - 1] * x[k]
    for t in range(nterms):
        v = coeffs[t]
        for k in range(d):
            e = exps[t * d + k]
            if e:
                v *= powtab[k * stride + e]
        total += v
    out[0] = total


def rk4_run(const int[:, ::1] exps, const double[::1] coeffs, const int[::1] comp, int maxdeg,
            const int[:, ::1] phi_exps, const double[::1] phi_coeffs,
            double[:, ::1] state, double dt, Py_ssize_t n_skip, Py_ssize_t n_avg, double bound,
            double[:, ::1] traj):
    """Advance every row of ``state`` by ``n_skip + n_avg`` RK4 steps in place.

    Returns ``(averages, escape_step)``: the trapezoidal mean of the observable
    over the last ``n_avg`` steps and, per row, the step at which the state norm
    first exceeded ``bound`` (``-1`` if never).  When ``traj`` has at least one
    row the first ensemble member is recorded at every step.
    """
    cdef Py_ssize_t nens = state.shape[0]
    cdef Py_ssize_t d = state.shape[1]
    cdef Py_ssize_t nterms = coeffs.shape[0]
    cdef Py_ssize_t nphi = phi_coeffs.shape[0]
    cdef Py_ssize_t total = n_skip + n_avg
    cdef Py_ssize_t r, s, k
    cdef bint record = traj.shape[0] > 0
    averages = np.zeros(nens)
    escape = np.full(nens, -1, dtype=np.int64)
    cdef double[::1] avg = averages
    cdef long long[::1] esc = escape
    work = np.zeros(6 * d + d * (maxdeg + 1) + 1)
    cdef double[::1] w = work
    cdef double* x = &w[0]
    cdef double* k1 = &w[d]
    cdef double* k2 = &w[2 * d]
    cdef double* k3 = &w[3 * d]
    cdef double* k4 = &w[4 * d]
    cdef double* tmp = &w[5 * d]
    cdef double* powtab = &w[6 * d]
    cdef double phi_val, acc, nrm, h2 = 0.5 * dt, h6 = dt / 6.0
    cdef double one = 1.0
    cdef const int* ex = &exps[0, 0] if nterms else NULL
    cdef const double* cf = &coeffs[0] if nterms else NULL
    cdef const int* cp = &comp[0] if nterms else NULL
    cdef const int* pex = &phi_exps[0, 0] if nphi else NULL
    cdef const double* pcf = &phi_coeffs[0] if nphi else NULL
    with nogil:
        for r in range(nens):
            for k in range(d):
                x[k] = state[r, k]
            if record and r == 0:
                for k in range(d):
                    traj[0, k] = x[k]
            acc = 0.0
            for s in range(total + 1):
                if s >= n_skip and nphi:
                    _phi(x, &phi_val, powtab, d, maxdeg, nphi, pex, pcf)
                    if s == n_skip or s == total:
                        acc += 0.5 * phi_val
                    else:
                        acc += phi_val
                if s == total:
                    break
                _field(x, k1, powtab, d, maxdeg, nterms, ex, cf, cp, d)
                for k in range(d):
                    tmp[k] = x[k] + h2 * k1[k]
                _field(tmp, k2, powtab, d, maxdeg, nterms, ex, cf, cp, d)
                for k in range(d):
                    tmp[k] = x[k] + h2 * k2[k]
                _field(tmp, k3, powtab, d, maxdeg, nterms, ex, cf, cp, d)
                for k in range(d):
                    tmp[k] = x[k] + dt * k3[k]
                _field(tmp, k4, powtab, d, maxdeg, nterms, ex, cf, cp, d)
                nrm = 0.0
                for k in range(d):
                    x[k] = x[k] + h6 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
                    nrm += x[k] * x[k]
                if record and r == 0:
                    for k in range(d):
                        traj[s + 1, k] = x[k]
                if not (sqrt(nrm) <= bound):
                    esc[r] = s + 1
                    break
            for k in range(d):
                state[r, k] = x[k]
            if n_avg > 0:
                avg[r] = acc / n_avg
    return averages, escape
