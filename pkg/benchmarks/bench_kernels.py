"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Times one Schur-complement accumulation on a Gram-sized block and an RK4
ensemble run of the lifted Duffing system, and checks both backends agree.
"""

import argparse
import time

import numpy as np

from sosbound import _fallback, dynsys
from sosbound.polyring import Polynomial
from sosbound.simulate import _pack

try:
    from sosbound import _kernels
except ImportError:  # extension not built
    _kernels = None


def schur_case(n: int = 35, atoms: int = 300, seed: int = 0):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n)
    pick = rng.choice(iu.size, size=min(atoms * 2, iu.size), replace=False)
    r, c = iu[pick], ju[pick]
    rows = np.concatenate([r, c[r != c]]).astype(np.int32)
    cols = np.concatenate([c, r[r != c]]).astype(np.int32)
    a = rng.integers(0, atoms, size=pick.size)
    at = np.concatenate([a, a[r != c]]).astype(np.int32)
    vals = rng.standard_normal(at.size)
    B = rng.standard_normal((n, n))
    X = np.ascontiguousarray(B @ B.T + n * np.eye(n))
    S = np.ascontiguousarray(np.linalg.inv(X))
    return atoms, X, S, rows, cols, at, vals


def run_schur(mod, case):
    atoms, X, S, rows, cols, at, vals = case
    M = np.zeros((atoms, atoms))
    mod.schur_accumulate(M, X, S, rows, cols, at, vals)
    return M


def run_rk4(mod, count: int = 16, steps: int = 20000, dt: float = 1e-2):
    sys = dynsys.duffing()
    exps, coeffs, comp, fdeg = _pack(sys.field, sys.dim)
    pe, pc, _, pdeg = _pack([Polynomial.variable(0, sys.dim) ** 2], sys.dim)
    rng = np.random.default_rng(1)
    state = rng.uniform(-1, 1, size=(count, sys.dim))
    state[:, 2:] = [0.0, 1.0]
    state = np.ascontiguousarray(state)
    avg, _ = mod.rk4_run(exps, coeffs, comp, max(fdeg, pdeg), pe, pc, state, dt, steps // 2, steps // 2,
                         1e8, np.zeros((0, sys.dim)))
    return np.asarray(avg)


def timed(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = [("python", _fallback)] + ([("cython", _kernels)] if _kernels is not None else [])
    if _kernels is None:
        print("compiled extension not available; timing the fallback only")
    case = schur_case()
    results = {}
    print(f"{'kernel':<8} {'backend':<8} {'seconds':>10}")
    for kname, fn in (("schur", lambda m: run_schur(m, case)), ("rk4", run_rk4)):
        for bname, mod in backends:
            t, out = timed(lambda: fn(mod), args.repeat)
            results[(kname, bname)] = (t, out)
            print(f"{kname:<8} {bname:<8} {t:10.4f}")
        if len(backends) == 2:
            (tp, op), (tc, oc) = results[(kname, "python")], results[(kname, "cython")]
            diff = float(np.max(np.abs(op - oc)) / max(1.0, np.max(np.abs(op))))
            print(f"{kname:<8} speedup {tp / tc:8.1f}x  max rel diff {diff:.1e}")


if __name__ == "__main__":
    main()
