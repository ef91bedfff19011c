import json

import numpy as np
import pytest

from rompc import polytope as pt
from rompc.polytope import HPolytope
from rompc.sim import (DisturbanceModel, Trace, check_constraints, convergence_entry,
                       detect_rompc_convergence, fit_decay_rate, membership_violations,
                       run_closed_loop, run_controller, uniform_model, vertex_model)


@pytest.fixture(scope="module")
def uniform_trace(synthetic_artifact):
    art = synthetic_artifact
    return run_closed_loop(art.plant, art, uniform_model(art.model, 7), steps=200, seed=7)


def test_uniform_samples_admissible_and_seeded(synthetic_artifact):
    m = synthetic_artifact.model
    a, b = uniform_model(m, 3), uniform_model(m, 3)
    A = np.array([np.concatenate(a.sample()) for _ in range(500)])
    B = np.array([np.concatenate(b.sample()) for _ in range(500)])
    assert np.array_equal(A, B)
    W, V = A[:, :m.W.dim], A[:, m.W.dim:]
    assert membership_violations(W, m.W, tol=0.0) == 0
    assert membership_violations(V, m.V, tol=0.0) == 0
    a.reset()
    assert np.array_equal(np.concatenate(a.sample()), A[0])
    c = uniform_model(m, 4)
    assert not np.array_equal(np.concatenate(c.sample()), A[0])


def test_hit_and_run_on_triangle():
    tri = HPolytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    d = DisturbanceModel("uniform", tri, pt.box([-1.0], [1.0]), seed=5)
    W = np.array([d.sample()[0] for _ in range(2000)])
    assert membership_violations(W, tri, tol=1e-12) == 0
    # the triangle's centroid is (1/3, 1/3)
    assert np.allclose(W.mean(axis=0), 1 / 3, atol=0.03)


def test_vertex_model_on_boundary(synthetic_artifact):
    m = synthetic_artifact.model
    d = vertex_model(m)
    w, v = d.sample()
    assert np.max(m.W.A @ w - m.W.b) == pytest.approx(0.0, abs=1e-12)
    assert np.max(m.V.A @ v - m.V.b) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        DisturbanceModel("vertex", m.W, m.V, w_const=np.zeros(m.W.dim), v_const=np.zeros(m.V.dim))
    with pytest.raises(ValueError):
        DisturbanceModel("gaussian", m.W, m.V)


def test_replay_window(synthetic_artifact):
    m = synthetic_artifact.model
    d = DisturbanceModel("replay", m.W, m.V, w_seq=np.ones((2, m.W.dim)) * 0.01,
                         v_seq=np.ones((2, 1)) * 0.02, start=1)
    seq = [d.sample() for _ in range(4)]
    assert not seq[0][0].any() and seq[1][0][0] == 0.01 and seq[2][1][0] == 0.02 and not seq[3][0].any()


def test_log_consistency(synthetic_artifact, uniform_trace):
    art, tr = synthetic_artifact, uniform_trace
    assert len(tr) == 200 and tr.failure is None
    assert np.array_equal(tr.d, tr.x_hat - tr.x_bar)
    for k in range(len(tr)):
        assert np.array_equal(tr.e[k], art.plant.H @ tr.xf[k] - art.rom.H @ tr.x_bar[k])
        assert np.array_equal(tr.zr[k], art.model.T.T @ tr.z[k])


def test_trace_replay_reproduces_states(synthetic_artifact, uniform_trace):
    p, tr = synthetic_artifact.plant, uniform_trace
    x = tr.xf[0]
    for k in range(len(tr) - 1):
        x = p.A @ x + p.B @ tr.u[k] + tr.w[k]
        assert np.abs(x - tr.xf[k + 1]).max() <= 1e-9
    x = p.A @ x + p.B @ tr.u[-1] + tr.w[-1]
    assert np.abs(x - tr.metadata["final_xf"]).max() <= 1e-9


def test_uniform_run_compliance(synthetic_artifact, uniform_trace):
    art, tr = synthetic_artifact, uniform_trace
    assert check_constraints(tr, art.model.Z, art.model.U).ok
    assert membership_violations(tr.d, art.D.poly) == 0
    assert membership_violations(tr.e, art.E.poly) == 0
    assert set(tr.qp_status) == {"optimal"}
    assert convergence_entry(tr, art.setpoints[0].r, art.R.poly).stayed


def test_determinism(synthetic_artifact, uniform_trace):
    art = synthetic_artifact
    again = run_closed_loop(art.plant, art, uniform_model(art.model, 7), steps=200, seed=7)
    assert again.to_json() == uniform_trace.to_json()
    assert again.to_csv() == uniform_trace.to_csv()


def test_trace_serialization(tmp_path, uniform_trace):
    tr = uniform_trace
    back = Trace.from_dict(json.loads(tr.to_json()))
    assert back.to_json() == tr.to_json()
    csv = tr.to_csv().splitlines()
    comments = [l for l in csv if l.startswith("#")]
    rows = [l for l in csv if not l.startswith("#")]
    assert any(l.startswith("# config_hash=") for l in comments)
    assert rows[0].split(",") == tr.header() and len(rows) == len(tr) + 1
    csv_path, json_path = tr.save(tmp_path / "run")
    assert csv_path.exists() and json_path.exists()


def test_zero_step_trace(synthetic_artifact):
    art = synthetic_artifact
    tr = run_closed_loop(art.plant, art, DisturbanceModel("zero", art.model.W, art.model.V), steps=0)
    assert len(tr) == 0 and tr.failure is None
    rows = [l for l in tr.to_csv().splitlines() if not l.startswith("#")]
    assert len(rows) == 1
    assert Trace.from_dict(json.loads(tr.to_json())).to_json() == tr.to_json()


def test_infeasible_start_truncates(synthetic_artifact):
    art = synthetic_artifact
    prob = art.problem(0)
    zero = DisturbanceModel("zero", art.model.W, art.model.V)
    tr = run_controller(art.plant, prob, art.gains, art.model.T.T, zero, 10,
                        x_hat0=[1e3, 1e3], x_bar0=[1e3, 1e3])
    assert len(tr) == 0 and tr.failure["k"] == 0


def test_initial_state_outside_Z_rejected(synthetic_artifact):
    art = synthetic_artifact
    x0 = np.zeros(art.plant.n)
    x0[0] = 100.0
    with pytest.raises(ValueError):
        run_closed_loop(art.plant, art, DisturbanceModel("zero", art.model.W, art.model.V), x0=x0)


def _const_trace(zr):
    tr = Trace.empty(1, 1, 1, 1, 1, 1)
    zr = np.asarray(zr, dtype=float).reshape(-1, 1)
    tr.k = np.arange(len(zr))
    tr.zr = zr
    return tr


def test_convergence_entry_examples():
    R = pt.box([-0.1], [0.1])
    assert convergence_entry(_const_trace([2.0] * 10), [2.0], R).k_enter == 0
    osc = _const_trace([2.5, 1.5] * 5)
    e = convergence_entry(osc, [2.0], R)
    assert e.k_enter is None and not e.stayed
    late = _const_trace([3.0, 3.0, 2.05, 2.0])
    assert convergence_entry(late, [2.0], R).k_enter == 2


def test_rompc_convergence_detection(synthetic_artifact, uniform_trace):
    art = synthetic_artifact
    t = art.setpoints[0].targets
    steady = Trace.empty(art.plant.n, 2, 1, 1, 2, 1)
    steady.k = np.arange(5)
    steady.x_bar = np.tile(t.x_bar_inf, (5, 1))
    steady.u_bar = np.tile(t.u_bar_inf, (5, 1))
    assert detect_rompc_convergence(steady, t, 1e-9, 1e-9) == 0
    # the nominal state never sees the noise, so only a zero threshold is unattainable
    assert detect_rompc_convergence(uniform_trace, t, 0.0, 0.0) is None


def test_convergence_matches_decay_rate(synthetic_artifact):
    art = synthetic_artifact
    t = art.setpoints[0].targets
    tr = run_closed_loop(art.plant, art, DisturbanceModel("zero", art.model.W, art.model.V), steps=300)
    err = np.abs(tr.x_bar - t.x_bar_inf).max(axis=1)
    rho = fit_decay_rate(err[err > 1e-10])
    assert 0 < rho < 1
    k_r = detect_rompc_convergence(tr, t, 1e-4, 1e-4)
    assert k_r is not None
    predicted = np.log(1e-4 / err[0]) / np.log(rho)
    assert 0.3 * predicted <= k_r <= 3 * predicted + 5


def test_constraint_checker_flags_violation():
    tr = Trace.empty(1, 1, 1, 1, 1, 1)
    tr.k = np.arange(3)
    tr.z = np.array([[0.0], [2.0], [0.0]])
    tr.u = np.zeros((3, 1))
    rep = check_constraints(tr, pt.box([-1.0], [1.0]), pt.box([-1.0], [1.0]))
    assert not rep.ok and rep.first_violation == 1 and rep.worst_margin == pytest.approx(-1.0)
