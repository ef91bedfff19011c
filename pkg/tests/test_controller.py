import dataclasses

import numpy as np
import pytest

from rompc import polytope as pt
from rompc import synthesis as sy
from rompc.controller import (ControllerState, ROMPCProblem, RompcInfeasible, assemble_qp,
                              candidate_violation, control_step, shifted_candidate, solve_rompc)
from rompc.lti import StateSpace


@pytest.fixture(scope="module")
def prob(synthetic_artifact):
    return synthetic_artifact.problem(0)


def _scalar_problem(N):
    rom = StateSpace([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    w = sy.CostWeights(np.eye(1), np.eye(1), N)
    P, K_f = sy.lqr(rom, w.Q, w.R)
    x_inf, u_inf = np.array([2.0]), np.array([1.0])
    Zb, Ub = pt.box([-10], [10]), pt.box([-5], [5])
    Delta = sy.terminal_set(rom, K_f, Zb, Ub, x_inf, u_inf)
    chain = sy.TargetChain(x_inf, u_inf, x_inf, x_inf, u_inf, np.array([2.0]))
    return ROMPCProblem(rom, w, P, Zb, Ub, Delta, chain, K_f)


def test_fixed_point_value_zero():
    p = _scalar_problem(1)
    sol = solve_rompc(p, [2.0])
    assert sol.value == pytest.approx(0.0, abs=1e-10)
    assert sol.u_bar[0] == pytest.approx([1.0], abs=1e-8)


def test_qp_dimensions(prob):
    qp = assemble_qp(prob, prob.targets.x_bar_inf)
    n, m, N = prob.rom.n, prob.rom.m, prob.N
    assert qp.q.size == n * (N + 1) + m * N
    assert qp.Aeq.shape[0] == n * (N + 1)


def test_cost_zero_on_target_trajectory(prob):
    sol = solve_rompc(prob, prob.targets.x_bar_inf)
    assert sol.value <= 1e-9
    assert np.abs(sol.x_bar - prob.targets.x_bar_inf).max() <= 1e-6


def test_solution_feasibility(prob):
    x0 = prob.targets.x_bar_inf + np.array([0.5, -0.3])
    sol = solve_rompc(prob, x0)
    rom = prob.rom
    dyn = max(np.abs(rom.A @ sol.x_bar[i] + rom.B @ sol.u_bar[i] - sol.x_bar[i + 1]).max()
              for i in range(prob.N))
    assert dyn <= 1e-8
    assert candidate_violation(prob, sol.x_bar, sol.u_bar) <= 1e-7


def test_unconstrained_matches_lqr(prob):
    big = pt.box(-1e4 * np.ones(2), 1e4 * np.ones(2))
    bigu = pt.box([-1e4], [1e4])
    t = prob.targets
    Delta = sy.terminal_set(prob.rom, prob.K_f, big, bigu, t.x_bar_inf, t.u_bar_inf)
    w = sy.CostWeights(prob.weights.Q, prob.weights.R, 25)
    p = ROMPCProblem(prob.rom, w, prob.P, big, bigu, Delta, t, prob.K_f)
    x0 = t.x_bar_inf + np.array([3.0, -2.0])
    sol = solve_rompc(p, x0)
    lqr_u = t.u_bar_inf + prob.K_f @ (x0 - t.x_bar_inf)
    assert sol.u_bar[0] == pytest.approx(lqr_u, abs=1e-5)


def test_value_descent_and_shift_feasibility(prob):
    rom, Q, R = prob.rom, prob.weights.Q, prob.weights.R
    t = prob.targets
    x = t.x_bar_inf + np.array([1.0, 1.0])
    prev = None
    for _ in range(40):
        sol = solve_rompc(prob, x)
        if prev is not None:
            stage = (prev[1] - t.x_bar_inf) @ Q @ (prev[1] - t.x_bar_inf) + \
                    (prev[2] - t.u_bar_inf) @ R @ (prev[2] - t.u_bar_inf)
            assert sol.value <= prev[0] - stage + 1e-6
            assert candidate_violation(prob, *shifted_candidate(prob, prev[3])) <= 1e-7
        prev = (sol.value, x, sol.u_bar[0], sol)
        x = rom.A @ x + rom.B @ sol.u_bar[0]


def test_infeasible_start_raises(prob):
    with pytest.raises(RompcInfeasible):
        solve_rompc(prob, np.array([1e3, -1e3]))


def test_step_at_steady_chain(synthetic_artifact, prob):
    art = synthetic_artifact
    t = prob.targets
    ctrl = ControllerState(t.x_hat_inf, t.x_bar_inf)
    y = art.plant.C @ t.x_f_inf
    u, nxt, info = control_step(prob, art.gains, ctrl, y)
    assert u == pytest.approx(t.u_inf, abs=1e-7)
    assert np.abs(nxt.x_hat - t.x_hat_inf).max() <= 1e-7
    assert np.abs(nxt.x_bar - t.x_bar_inf).max() <= 1e-7
    assert info.status == "optimal"


def test_zero_feedback_is_feedforward(synthetic_artifact, prob):
    g = synthetic_artifact.gains
    zero = sy.Gains(np.zeros_like(g.K), g.L, g.K_f)
    ctrl = ControllerState(prob.targets.x_bar_inf + 0.1, prob.targets.x_bar_inf)
    u, _, info = control_step(prob, zero, ctrl, [0.0])
    assert np.array_equal(u, info.u_bar)


def test_terminal_contraction(synthetic_artifact, prob):
    t = prob.targets
    AK = prob.rom.A + prob.rom.B @ prob.K_f
    rho = np.linalg.norm(AK, 2)
    delta = 1e-3 * np.array([1.0, -0.5])
    ctrl = ControllerState(t.x_bar_inf + delta, t.x_bar_inf + delta)
    _, nxt, _ = control_step(prob, synthetic_artifact.gains, ctrl, [0.0])
    assert np.linalg.norm(nxt.x_bar - t.x_bar_inf) <= rho * np.linalg.norm(delta) + 1e-9


def test_debug_reports_shift_violation(synthetic_artifact, prob):
    g = synthetic_artifact.gains
    ctrl = ControllerState.initial(2, prob.targets.x_bar_inf + 0.5)
    for _ in range(5):
        _, ctrl, info = control_step(prob, g, ctrl, [0.0], debug=True)
    assert info.shift_violation is not None and info.shift_violation <= 1e-7


def test_problem_check(prob):
    prob.check()
    bad = dataclasses.replace(prob, Ubar=pt.box([10.0], [11.0]))
    with pytest.raises(ValueError):
        bad.check()


def test_initial_state_defaults():
    s = ControllerState.initial(3)
    assert not s.x_hat.any() and not s.x_bar.any() and s.last_solution is None
    s = ControllerState.initial(2, [1.0, 2.0])
    assert np.array_equal(s.x_bar, [1.0, 2.0]) and s.x_bar is not s.x_hat
