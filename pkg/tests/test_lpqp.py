import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rompc.lpqp import (LinearProgram, QuadraticProgram, Status, dump_problem, solve_lp,
                        solve_qp)


def test_lp_trivial():
    r = solve_lp(LinearProgram([1.0], Aineq=[[1.0]], bineq=[1.0]))
    assert r.ok and r.objective == pytest.approx(1.0) and r.x == pytest.approx([1.0])


def test_lp_infeasible():
    r = solve_lp(LinearProgram([1.0], Aineq=[[1.0], [-1.0]], bineq=[-1.0, -1.0]))
    assert r.status is Status.INFEASIBLE


def test_lp_unbounded():
    r = solve_lp(LinearProgram([1.0], Aineq=[[-1.0]], bineq=[0.0]))
    assert r.status is Status.UNBOUNDED


def test_lp_unit_square_vertex():
    A = np.vstack([np.eye(2), -np.eye(2)])
    b = np.array([1, 1, 0, 0.0])
    r = solve_lp(LinearProgram([1.0, 1.0], Aineq=A, bineq=b))
    verts = [np.array(v) for v in ((0, 0), (0, 1), (1, 0), (1, 1))]
    assert r.objective == pytest.approx(max(v.sum() for v in verts))
    assert np.allclose(r.x, [1, 1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_lp_dual_certificate(seed):
    rng = np.random.default_rng(seed)
    A = np.vstack([rng.standard_normal((6, 3)), np.eye(3), -np.eye(3)])
    b = rng.uniform(0.5, 2, len(A))
    c = rng.standard_normal(3)
    Aeq = rng.standard_normal((1, 3)) * 0.1
    r = solve_lp(LinearProgram(c, Aeq, np.zeros(1), A, b))
    assert r.ok
    # reconstruct the dual objective from the certified multipliers
    dual = r.dual_eq @ np.zeros(1) + r.dual_ineq @ b
    assert np.all(r.dual_ineq >= -1e-9)
    assert np.allclose(Aeq.T @ r.dual_eq + A.T @ r.dual_ineq, c, atol=1e-7)
    assert dual == pytest.approx(r.objective, abs=1e-7)


def test_qp_active_constraint():
    r = solve_qp(QuadraticProgram([[1.0]], [0.0], Aineq=[[-1.0]], bineq=[-1.0]))
    assert r.ok and r.x == pytest.approx([1.0])


def test_qp_unconstrained():
    r = solve_qp(QuadraticProgram(np.eye(3), np.zeros(3)))
    assert r.ok and np.allclose(r.x, 0)


def test_qp_projection():
    # 1/2 (x-2)^2 = 1/2 x^2 - 2x + 2
    r = solve_qp(QuadraticProgram([[1.0]], [-2.0], Aineq=[[1.0], [-1.0]], bineq=[1.0, 0.0]))
    assert r.x == pytest.approx([1.0])
    assert r.objective + 2.0 == pytest.approx(0.5)


def test_qp_infeasible():
    r = solve_qp(QuadraticProgram([[1.0]], [0.0], Aineq=[[1.0], [-1.0]], bineq=[-1.0, -1.0]))
    assert r.status is Status.INFEASIBLE


def test_qp_semidefinite_falls_back():
    # zero curvature in x2, bounded by the box
    P = np.diag([1.0, 0.0])
    A = np.vstack([np.eye(2), -np.eye(2)])
    r = solve_qp(QuadraticProgram(P, [0.0, -1.0], Aineq=A, bineq=np.ones(4)))
    assert r.ok and np.allclose(r.x, [0.0, 1.0], atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_qp_equality_only_matches_kkt(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((5, 5))
    P = M @ M.T + 0.5 * np.eye(5)
    q = rng.standard_normal(5)
    Aeq = rng.standard_normal((2, 5))
    beq = rng.standard_normal(2)
    K = np.block([[P, Aeq.T], [Aeq, np.zeros((2, 2))]])
    x_ref = np.linalg.solve(K, np.concatenate([-q, beq]))[:5]
    r = solve_qp(QuadraticProgram(P, q, Aeq, beq))
    assert r.ok and np.allclose(r.x, x_ref, atol=1e-7)


def test_determinism(rng):
    M = rng.standard_normal((6, 6))
    P = M @ M.T + np.eye(6)
    qp = QuadraticProgram(P, rng.standard_normal(6), Aineq=rng.standard_normal((8, 6)), bineq=np.ones(8))
    a, b = solve_qp(qp), solve_qp(qp)
    assert a.status == b.status and abs(a.objective - b.objective) <= 1e-12
    lp = LinearProgram(rng.standard_normal(6), Aineq=np.vstack([np.eye(6), -np.eye(6)]), bineq=np.ones(12))
    assert solve_lp(lp).objective == solve_lp(lp).objective


def test_validation_errors():
    with pytest.raises(ValueError):
        LinearProgram([1.0, np.nan])
    with pytest.raises(ValueError):
        QuadraticProgram([[1.0, 0.0], [1.0, 1.0]], [0, 0])
    with pytest.raises(ValueError):
        QuadraticProgram([[-1.0]], [0.0])


def test_dump_problem(tmp_path):
    path = dump_problem(LinearProgram([1.0, 2.0], Aineq=[[1.0, 1.0]], bineq=[3.0]), tmp_path / "lp.txt")
    text = path.read_text().splitlines()
    assert text[:2] == ["TYPE LP", "SENSE max"]
    assert "Aineq 1 2 2" in text
    path = dump_problem(QuadraticProgram(np.eye(1), [0.0]), tmp_path / "qp.txt")
    assert path.read_text().startswith("TYPE QP\nSENSE min\nP 1 1 1")
