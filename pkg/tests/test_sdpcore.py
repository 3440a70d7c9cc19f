import io

import numpy as np
import pytest

from oracles import augmented_lagrangian_sdp, cvxpy_sdpa_optimum, planted_sdp, read_sdpa
from sosbound import boundengine, sdpcore
from sosbound.dynsys import cubic1d, duffing
from sosbound.polyring import Polynomial
from sosbound.sdpcore import SdpProblem, SolverOptions, SolverStatus


@pytest.mark.parametrize("seed", range(10))
def test_planted_problems_match_oracle(seed):
    p = planted_sdp(np.random.default_rng(1000 + seed))
    sol = sdpcore.solve(SdpProblem.from_dense(p.C, p.A, p.b))
    assert sol.status is SolverStatus.OPTIMAL
    assert sol.rel_gap <= 1e-8
    ref = augmented_lagrangian_sdp(p.C, p.A, p.b)
    assert abs(sol.dual_objective - ref) <= 1e-5 * max(1.0, abs(ref))


def test_independent_certificate_check():
    p = planted_sdp(np.random.default_rng(7))
    prob = SdpProblem.from_dense(p.C, p.A, p.b)
    sol = sdpcore.solve(prob)
    report = sdpcore.check_certificate(prob, sol)
    assert report.passed, str(report)


def test_unbounded_dual_is_primal_infeasible():
    prob = SdpProblem.from_dense([np.array([[1.0]])], [[np.array([[-1.0]])]], [1.0])
    assert sdpcore.solve(prob).status is SolverStatus.PRIMAL_INFEASIBLE


def test_infeasible_dual_is_dual_infeasible():
    prob = SdpProblem.from_dense([np.diag([-1.0, 1.0])], [[np.diag([0.0, 1.0])]], [1.0])
    assert sdpcore.solve(prob).status is SolverStatus.DUAL_INFEASIBLE


def test_iteration_log_and_history():
    p = planted_sdp(np.random.default_rng(3))
    buf = io.StringIO()
    sol = sdpcore.solve(SdpProblem.from_dense(p.C, p.A, p.b), SolverOptions(log=buf))
    lines = buf.getvalue().splitlines()
    assert lines[0] == sdpcore.LOG_HEADER
    assert len(sol.history) == sol.iterations + 1  # includes the starting point
    gaps = [abs(r.gap) for r in sol.history]
    assert gaps[-1] < gaps[0]


def test_input_validation():
    with pytest.raises(ValueError):
        SdpProblem.from_dense([np.eye(2)], [[np.array([[0.0, 1.0], [0.0, 0.0]])]], [1.0])
    with pytest.raises(ValueError):
        SdpProblem.from_dense([np.eye(2)], [[np.eye(3)]], [1.0])
    with pytest.raises(ValueError):
        SdpProblem.from_dense([np.eye(2)], [], [1.0])


def test_sdpa_export_matches_cvxpy():
    p = planted_sdp(np.random.default_rng(11), max_m=8, max_size=6)
    prob = SdpProblem.from_dense(p.C, p.A, p.b)
    sol = sdpcore.solve(prob)
    data = read_sdpa(sdpcore.sdpa_text(prob))
    # SDPA minimizes c^T x with c = -b
    assert abs(cvxpy_sdpa_optimum(data) + sol.dual_objective) <= 1e-6 * max(1.0, abs(sol.dual_objective))


def test_bound_program_export_matches_cvxpy():
    q = boundengine.BoundQuery(duffing(omega=1.2), Polynomial.variable(0, 4) ** 2, v_degree=4)
    prob, _ = boundengine.build_program(q).to_sdp()
    sol = sdpcore.solve(prob)
    ref = cvxpy_sdpa_optimum(read_sdpa(sdpcore.sdpa_text(prob)))
    assert abs(ref + sol.dual_objective) <= 1e-5 * max(1.0, abs(ref))


def test_export_is_deterministic(tmp_path):
    q = boundengine.BoundQuery(cubic1d(), Polynomial.variable(0, 1) ** 2, v_degree=4)
    prob, _ = boundengine.build_program(q).to_sdp()
    a, b = tmp_path / "a.dat-s", tmp_path / "b.dat-s"
    sdpcore.export_sdpa(prob, a)
    prob2, _ = boundengine.build_program(q).to_sdp()
    sdpcore.export_sdpa(prob2, b)
    assert a.read_bytes() == b.read_bytes()


def test_kernel_backends_agree():
    from sosbound import _fallback, kernels

    rng = np.random.default_rng(0)
    n, K = 6, 10
    rows, cols = np.triu_indices(n)
    atoms = rng.integers(0, K, size=rows.size).astype(np.int32)
    off = rows != cols
    r = np.concatenate([rows, cols[off]]).astype(np.int32)
    c = np.concatenate([cols, rows[off]]).astype(np.int32)
    a = np.concatenate([atoms, atoms[off]]).astype(np.int32)
    v = rng.standard_normal(a.size)
    B = rng.standard_normal((n, n))
    X = np.ascontiguousarray(B @ B.T + np.eye(n))
    S = np.ascontiguousarray(np.linalg.inv(X))
    M1, M2 = np.zeros((K, K)), np.zeros((K, K))
    kernels.schur_accumulate(M1, X, S, r, c, a, v)
    _fallback.schur_accumulate(M2, X, S, r, c, a, v)
    np.testing.assert_allclose(M1, M2, rtol=1e-12, atol=1e-12)


def test_nt_direction_agrees_with_hkm():
    p = planted_sdp(np.random.default_rng(4))
    prob = SdpProblem.from_dense(p.C, p.A, p.b)
    a = sdpcore.solve(prob, SolverOptions(retry_other_direction=False))
    b = sdpcore.solve(prob, SolverOptions(direction="nt", retry_other_direction=False))
    assert a.status is b.status is SolverStatus.OPTIMAL
    assert abs(a.dual_objective - b.dual_objective) <= 1e-7 * max(1.0, abs(a.dual_objective))
    with pytest.raises(ValueError):
        SolverOptions(direction="xz")


def test_stalled_run_retries_other_direction():
    p = planted_sdp(np.random.default_rng(5))
    prob = SdpProblem.from_dense(p.C, p.A, p.b)
    buf = io.StringIO()
    sol = sdpcore.solve(prob, SolverOptions(max_iter=3, polish=False, log=buf))
    assert "retry with direction nt" in buf.getvalue()
    assert sol.status is SolverStatus.MAX_ITERATIONS
