import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sosbound import boundengine, sdpcore
from sosbound.dynsys import duffing
from sosbound.polyring import Polynomial, monomial_basis
from sosbound.soscert import (EqualityReducer, LinearPolyExpr, ProgramBuilder, SosProgram, UnrepresentableMonomial,
                              gram_parameterize, is_psd, reconstruct, sign_symmetry_group)

X2, Y2, XY = (2, 0), (0, 2), (1, 1)


def gram_example():
    p = Polynomial({(4, 0): 2.0, (0, 4): 5.0, (2, 2): 1.0}, 2)
    return gram_parameterize(LinearPolyExpr.const(p), [X2, Y2, XY])


def paper_index(block):
    """Map the ordering (x^2, y^2, xy) onto the block's basis positions."""
    pos = {m: k for k, m in enumerate(block.basis)}
    return [pos[X2], pos[Y2], pos[XY]]


def constraint_set(block, cons):
    """Constraints as {frozenset of (paper i, paper j, weight)}: rhs, ignoring trivial ones."""
    inv = {k: i + 1 for i, k in enumerate(paper_index(block))}
    out = {}
    for c in cons:
        terms = frozenset((min(inv[i], inv[j]), max(inv[i], inv[j]), w) for _, i, j, w in c.gram_terms)
        out[terms] = c.rhs_constant
    return out


def test_gram_example_constraints_exact():
    block, cons = gram_example()
    got = constraint_set(block, cons)
    expected = {
        frozenset({(1, 1, 1.0)}): 2.0,
        frozenset({(2, 2, 1.0)}): 5.0,
        frozenset({(3, 3, 1.0), (1, 2, 2.0)}): 1.0,
        frozenset({(1, 3, 2.0)}): 0.0,
        frozenset({(2, 3, 2.0)}): 0.0,
    }
    assert got == expected


def paper_gram(q12):
    Q = np.array([[2.0, q12, 0.0], [q12, 5.0, 0.0], [0.0, 0.0, 1.0 - 2.0 * q12]])
    block, _ = gram_example()
    idx = paper_index(block)
    out = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            out[idx[a], idx[b]] = Q[a, b]
    return block, out


@pytest.mark.parametrize("q12,feasible", [(-math.sqrt(10) + 1e-6, True), (0.0, True), (0.5, True),
                                          (-math.sqrt(10) - 1e-3, False), (0.5 + 1e-3, False)])
def test_gram_example_psd_window(q12, feasible):
    block, Q = paper_gram(q12)
    p = Polynomial({(4, 0): 2.0, (0, 4): 5.0, (2, 2): 1.0}, 2)
    assert reconstruct(Q, block.basis).allclose(p, 1e-12)
    assert is_psd(Q) == feasible


sym3 = st.lists(st.floats(-3, 3), min_size=6, max_size=6)


@settings(max_examples=100, deadline=None)
@given(sym3)
def test_reconstruct_satisfies_matching_constraints(vals):
    basis = monomial_basis(2, 1)
    Q = np.zeros((3, 3))
    Q[np.triu_indices(3)] = vals
    Q = Q + np.triu(Q, 1).T
    p = reconstruct(Q, basis)
    block, cons = gram_parameterize(LinearPolyExpr.const(p), basis)
    for c in cons:
        lhs = sum(w * Q[i, j] for _, i, j, w in c.gram_terms)
        assert abs(lhs - c.rhs_constant) <= 1e-9 * (1 + abs(c.rhs_constant))


def test_unrepresentable_monomial():
    p = Polynomial({(3, 0): 1.0}, 2)
    with pytest.raises(UnrepresentableMonomial):
        gram_parameterize(LinearPolyExpr.const(p), monomial_basis(2, 1))


def sos_shift_program(p: Polynomial, half: int) -> SosProgram:
    """min t such that p + t is SOS over monomials up to ``half``."""
    b = ProgramBuilder(p.nvars)
    t = b.new_var("t")
    b.add_block(monomial_basis(p.nvars, half))
    cert = LinearPolyExpr(p, {t: Polynomial.constant(1.0, p.nvars)})
    return SosProgram(nvars=p.nvars, names=b.names, var_names=b.var_names, certified=cert, blocks=b.blocks,
                      block_weights=b.block_weights, objective_var=t)


@pytest.mark.parametrize("seed", range(5))
def test_gram_round_trip_residual(seed):
    rng = np.random.default_rng(seed)
    basis = monomial_basis(2, 2)
    B = rng.standard_normal((len(basis), len(basis)))
    p = reconstruct(B @ B.T, basis)
    prog = sos_shift_program(p, 2)
    prob, rec = prog.to_sdp()
    sol = sdpcore.solve(prob)
    assert sol.status is sdpcore.SolverStatus.OPTIMAL
    u = rec.decision_values(prob, sol.X)
    grams = [prog.gram_matrix(k, Y) for k, Y in enumerate(sol.X)]
    assert boundengine.certificate_residual(prog, u, grams) < 1e-8
    # p is SOS, so the optimal shift is non-positive
    assert u[0] <= 1e-7


def test_equality_reducer_divide_reconstructs():
    x, y, z1, z2 = Polynomial.variables(4)
    h = 1.0 - z1 * z1 - z2 * z2
    red = EqualityReducer([h])
    p = x * z1 ** 4 + y * z2 ** 3 * z1 + z1 ** 2 * z2 ** 2 - 3.0
    quots, rem = red.divide(p)
    assert (sum((q * g for q, g in zip(quots, [h])), Polynomial.zero(4)) + rem).allclose(p, 1e-12)
    assert rem.allclose(red.reduce(p), 1e-12)
    assert red.reduce(rem).allclose(rem, 1e-12)
    assert all(red.is_standard(m) for m, _ in rem.items())


def test_symmetry_group_of_duffing():
    sysm = duffing()
    x = Polynomial.variable(0, 4)
    group = sign_symmetry_group(sysm.field, invariant=[x * x], signed=list(sysm.constraint_set.equalities))
    assert (-1, -1, -1, -1) in [tuple(g) for g in group]
