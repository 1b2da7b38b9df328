import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from irs_underlay.conic import Model
from irs_underlay.conic.core import (INFEASIBLE, OPTIMAL, UNBOUNDED, ConicProblem, dump, load,
                                     solve)
from irs_underlay.conic.model import Affine, vstack

cp = pytest.importorskip("cvxpy")


def test_orthant_minimum():
    # min x  s.t.  x - 1 >= 0   written as  b - A x = -1 + x  in the orthant
    p = ConicProblem(np.array([1.0]), sp.csc_matrix([[-1.0]]), np.array([-1.0]), [("nonneg", 1)])
    sol = solve(p)
    assert sol.status == OPTIMAL and sol.x[0] == pytest.approx(1.0, abs=1e-7)


def test_infeasible_pair():
    m = Model()
    x = m.real()
    m.add_ge(x, 1.0)
    m.add_le(x, 0.0)
    m.minimize(x)
    assert m.solve().status == INFEASIBLE


def test_unbounded():
    m = Model()
    x = m.real()
    m.add_le(x, 0.0)
    m.minimize(x)
    assert m.solve().status == UNBOUNDED


def matched_filter_sdp(h):
    m = Model()
    W = m.hermitian(h.size)
    m.add_psd(W)
    m.add_ge(W.inner(np.outer(h, h.conj())).real, 1.0)
    m.minimize(W.trace().real)
    m.solve()
    return m, m.value(W)


def test_matched_filter_sdp():
    h = np.array([2.0, 0.0, 0.0], complex)
    m, W = matched_filter_sdp(h)
    assert m.objective == pytest.approx(0.25, rel=1e-7)
    lam, U = np.linalg.eigh(W)
    assert abs(abs(U[0, -1]) - 1.0) < 1e-6


def test_rank_one_for_random_channels(rng):
    for _ in range(5):
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        m, W = matched_filter_sdp(h)
        lam = np.linalg.eigvalsh(W)
        assert lam[-2] <= 1e-6 * lam[-1]
        assert m.objective == pytest.approx(1 / np.linalg.norm(h) ** 2, rel=1e-6)


def test_weak_duality_and_repeatability(rng):
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    m = Model()
    W = m.hermitian(3)
    m.add_psd(W)
    m.add_ge(W.inner(np.outer(h, h.conj())).real, 1.0)
    m.minimize(W.trace().real)
    a = m.solve()
    b = m.solve()
    assert a.objective >= a.dual_objective - 1e-8
    assert abs(a.objective - b.objective) <= 1e-9
    assert max(a.residuals.values()) <= 1e-7


def test_socp_against_cvxpy(rng):
    A = rng.standard_normal((5, 3))
    b = rng.standard_normal(5)
    c = rng.standard_normal(3)
    # min c'x + t  s.t. ||A x - b|| <= t, ||x||^2 <= 4, x_0 >= -1
    m = Model()
    x = m.real(3)
    t = m.real()
    m.add_soc(t, A @ x - b)
    m.add_quad_le(x, 4.0)
    m.add_ge(x[0], -1.0)
    m.minimize(c @ x + t)
    m.solve()
    xv, tv = cp.Variable(3), cp.Variable()
    prob = cp.Problem(cp.Minimize(c @ xv + tv), [cp.norm(A @ xv - b) <= tv, cp.sum_squares(xv) <= 4, xv[0] >= -1])
    prob.solve(solver=cp.CLARABEL)
    assert m.objective == pytest.approx(prob.value, rel=1e-6, abs=1e-7)


def test_complex_sdp_against_cvxpy(rng):
    n = 3
    hs = [rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(2)]
    C = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    C = C @ C.conj().T + np.eye(n)
    m = Model()
    W = m.hermitian(n)
    m.add_psd(W)
    for i, h in enumerate(hs):
        m.add_ge(W.inner(np.outer(h, h.conj())).real, 1.0 + i)
    m.minimize(W.inner(C).real)
    m.solve()
    X = cp.Variable((n, n), hermitian=True)
    cons = [X >> 0] + [cp.real(cp.trace(np.outer(h, h.conj()) @ X)) >= 1.0 + i for i, h in enumerate(hs)]
    prob = cp.Problem(cp.Minimize(cp.real(cp.trace(C @ X))), cons)
    prob.solve(solver=cp.CLARABEL)
    assert m.objective == pytest.approx(prob.value, rel=1e-6)


def test_rotated_cone_epigraph():
    # min s  s.t.  s * r >= 2,  r <= 0.5   ->  s = 4
    m = Model()
    s, r = m.real(), m.real()
    m.add_rsoc(s, r, np.sqrt(2.0))
    m.add_le(r, 0.5)
    m.minimize(s)
    m.solve()
    assert m.objective == pytest.approx(4.0, rel=1e-7)


def test_dump_round_trip(tmp_path, rng):
    m = Model()
    W = m.hermitian(2)
    m.add_psd(W)
    m.add_ge(W.inner(np.diag([1.0, 2.0])).real, 1.0)
    m.minimize(W.trace().real)
    p = m.problem()
    dump(p, tmp_path / "p.txt")
    q = load(tmp_path / "p.txt")
    assert q.cones == p.cones
    assert np.allclose(q.A.toarray(), p.A.toarray()) and np.allclose(q.b, p.b) and np.allclose(q.c, p.c)
    assert solve(q).objective == pytest.approx(solve(p).objective)


def test_bad_dimensions_rejected():
    with pytest.raises(ValueError):
        ConicProblem(np.zeros(2), sp.csc_matrix((3, 2)), np.zeros(3), [("nonneg", 2)])


@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_affine_algebra_evaluates_linearly(vals):
    m = Model()
    x = m.real(3)
    z = m.complex(3)  # real parts then imaginary parts
    A = np.arange(9.0).reshape(3, 3) - 4j
    expr = A @ x + 2.0 * z.conj() - vstack([x[0], x[1], x[2]]) * 0.5
    v = np.asarray(vals)
    xv, zv = v[:3], v[3:6] + 1j * v[6:9]
    assert np.allclose(expr.value(v), A @ xv + 2.0 * np.conj(zv) - 0.5 * xv)
    assert np.allclose((z @ A).value(v), zv @ A)
    assert np.isclose(z.sum().value(v), zv.sum())


def test_hermitian_variable_is_hermitian(rng):
    m = Model()
    W = m.hermitian(3)
    x = rng.standard_normal(m.nv)
    Wv = W.value(x)
    assert np.allclose(Wv, Wv.conj().T)
    assert Affine.lift(np.eye(2)).shape == (2, 2)
