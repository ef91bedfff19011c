"""Online reduced-order MPC: QP assembly, solve, and the per-step control protocol."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import polytope as pt
from .lpqp import QuadraticProgram, SolveResult, Status, solve_qp
from .lti import StateSpace
from .polytope import HPolytope
from .synthesis import CostWeights, Gains, TargetChain


class RompcInfeasible(RuntimeError):
    """The reduced-order MPC problem has no feasible solution at the current nominal state."""

    def __init__(self, message: str, result: SolveResult | None = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class ROMPCProblem:
    """Everything the online QP needs, fixed for one setpoint.

    ``P`` is the terminal cost and ``Delta`` the terminal set around the
    target ``x_bar_inf`` (the terminal constraint is ``x_N in Delta + {x_bar_inf}``).
    """

    rom: StateSpace
    weights: CostWeights
    P: np.ndarray
    Zbar: HPolytope
    Ubar: HPolytope
    Delta: HPolytope
    targets: TargetChain
    K_f: np.ndarray

    @property
    def N(self) -> int:
        return self.weights.N

    def check(self) -> None:
        if pt.is_empty(self.Zbar) or pt.is_empty(self.Ubar):
            raise ValueError("tightened constraint sets must be nonempty")
        if not pt.contains(self.Zbar, self.rom.H @ self.targets.x_bar_inf):
            raise ValueError("target H x_bar_inf lies outside the tightened Z")
        if not pt.contains(self.Ubar, self.targets.u_bar_inf):
            raise ValueError("target u_bar_inf lies outside the tightened U")


@dataclass(frozen=True)
class ControllerState:
    """Reduced-order estimate and nominal state, plus the previous optimal plan."""

    x_hat: np.ndarray
    x_bar: np.ndarray
    last_solution: tuple[np.ndarray, np.ndarray] | None = None

    @classmethod
    def initial(cls, n: int, x_hat0=None, x_bar0=None) -> "ControllerState":
        x_hat0 = np.zeros(n) if x_hat0 is None else np.asarray(x_hat0, dtype=float).copy()
        x_bar0 = x_hat0.copy() if x_bar0 is None else np.asarray(x_bar0, dtype=float).copy()
        return cls(x_hat0, x_bar0)


@dataclass
class RompcSolution:
    x_bar: np.ndarray  # (N+1, n)
    u_bar: np.ndarray  # (N, m)
    value: float
    result: SolveResult
    active: int


def _layout(prob: ROMPCProblem) -> tuple[int, int, int]:
    n, m = prob.rom.n, prob.rom.m
    return n, m, n * (prob.N + 1)


def assemble_qp(prob: ROMPCProblem, x_bar_k) -> QuadraticProgram:
    """Stacked QP in ``(x_0..x_N, u_0..u_{N-1})``.

    The cost ``sum |x_i - x_inf|_Q^2 + |u_i - u_inf|_R^2 + |x_N - x_inf|_P^2``
    is expanded so that the target offsets only enter the linear term; the
    dropped constant is recovered by :func:`solve_rompc` when reporting the
    optimal value.
    """
    rom, N = prob.rom, prob.N
    n, m, nx = _layout(prob)
    nv = nx + m * N
    Q, R, P = prob.weights.Q, prob.weights.R, prob.P
    xs, us = prob.targets.x_bar_inf, prob.targets.u_bar_inf
    H = np.zeros((nv, nv))
    q = np.zeros(nv)
    for i in range(N):
        H[i * n:(i + 1) * n, i * n:(i + 1) * n] = 2 * Q
        q[i * n:(i + 1) * n] = -2 * Q @ xs
        j = nx + i * m
        H[j:j + m, j:j + m] = 2 * R
        q[j:j + m] = -2 * R @ us
    H[N * n:nx, N * n:nx] = 2 * P
    q[N * n:nx] = -2 * P @ xs
    # equalities: x_0 = x_bar_k, x_{i+1} = A x_i + B u_i
    Aeq = np.zeros((n * (N + 1), nv))
    beq = np.zeros(n * (N + 1))
    Aeq[:n, :n] = np.eye(n)
    beq[:n] = np.asarray(x_bar_k, dtype=float)
    for i in range(N):
        r = n * (i + 1)
        Aeq[r:r + n, (i + 1) * n:(i + 2) * n] = np.eye(n)
        Aeq[r:r + n, i * n:(i + 1) * n] = -rom.A
        Aeq[r:r + n, nx + i * m:nx + (i + 1) * m] = -rom.B
    rows, rhs = [], []
    FZ = prob.Zbar.A @ rom.H
    for i in range(N):
        blk = np.zeros((FZ.shape[0], nv))
        blk[:, i * n:(i + 1) * n] = FZ
        rows.append(blk)
        rhs.append(prob.Zbar.b)
        blk = np.zeros((prob.Ubar.n_faces, nv))
        blk[:, nx + i * m:nx + (i + 1) * m] = prob.Ubar.A
        rows.append(blk)
        rhs.append(prob.Ubar.b)
    blk = np.zeros((prob.Delta.n_faces, nv))
    blk[:, N * n:nx] = prob.Delta.A
    rows.append(blk)
    rhs.append(prob.Delta.b + prob.Delta.A @ xs)
    return QuadraticProgram(H, q, Aeq, beq, np.vstack(rows), np.concatenate(rhs))


def _cost_constant(prob: ROMPCProblem) -> float:
    xs, us = prob.targets.x_bar_inf, prob.targets.u_bar_inf
    N = prob.N
    return float(N * (xs @ prob.weights.Q @ xs + us @ prob.weights.R @ us) + xs @ prob.P @ xs)


def solve_rompc(prob: ROMPCProblem, x_bar_k) -> RompcSolution:
    """Optimal nominal plan from ``x_bar_k``; raises :class:`RompcInfeasible`."""
    qp = assemble_qp(prob, x_bar_k)
    res = solve_qp(qp)
    if res.status is Status.INFEASIBLE:
        raise RompcInfeasible("reduced-order MPC problem is infeasible", res)
    if not res.ok:
        raise RompcInfeasible(f"reduced-order MPC solve failed: {res.detail}", res)
    n, m, nx = _layout(prob)
    x = res.x
    slack = qp.bineq - qp.Aineq @ x
    return RompcSolution(
        x_bar=x[:nx].reshape(prob.N + 1, n),
        u_bar=x[nx:].reshape(prob.N, m),
        value=max(0.0, res.objective + _cost_constant(prob)),
        result=res,
        active=int(np.sum(slack <= 1e-9)),
    )


def shifted_candidate(prob: ROMPCProblem, sol: RompcSolution) -> tuple[np.ndarray, np.ndarray]:
    """Previous plan shifted by one step and closed with the terminal controller."""
    xs, us = prob.targets.x_bar_inf, prob.targets.u_bar_inf
    xN = sol.x_bar[-1]
    uN = us + prob.K_f @ (xN - xs)
    x_new = np.vstack([sol.x_bar[1:], prob.rom.A @ xN + prob.rom.B @ uN])
    u_new = np.vstack([sol.u_bar[1:], uN])
    return x_new, u_new


def candidate_violation(prob: ROMPCProblem, x_traj: np.ndarray, u_traj: np.ndarray) -> float:
    """Largest constraint violation of a plan (0 when feasible)."""
    qp = assemble_qp(prob, x_traj[0])
    z = np.concatenate([x_traj.ravel(), u_traj.ravel()])
    eq = np.abs(qp.Aeq @ z - qp.beq).max(initial=0.0)
    ineq = np.max(qp.Aineq @ z - qp.bineq, initial=0.0)
    return float(max(eq, ineq, 0.0))


@dataclass
class StepInfo:
    value: float
    status: str
    active: int
    u_bar: np.ndarray
    shift_violation: float | None = None
    extra: dict = field(default_factory=dict)


def control_step(prob: ROMPCProblem, gains: Gains, ctrl: ControllerState, y_k,
                 debug: bool = False) -> tuple[np.ndarray, ControllerState, StepInfo]:
    """One controller step: plan, apply feedback, update observer and nominal state.

    With ``debug`` the previous plan, shifted and closed by the terminal law,
    is checked for feasibility at the new nominal state.
    """
    shift_viol = None
    if debug and ctrl.last_solution is not None:
        shift_viol = candidate_violation(prob, *ctrl.last_solution)
    sol = solve_rompc(prob, ctrl.x_bar)
    u_bar0 = sol.u_bar[0]
    u = u_bar0 + gains.K @ (ctrl.x_hat - ctrl.x_bar)
    rom = prob.rom
    y_k = np.asarray(y_k, dtype=float).reshape(-1)
    x_hat = rom.A @ ctrl.x_hat + rom.B @ u + gains.L @ (y_k - rom.C @ ctrl.x_hat)
    x_bar = rom.A @ ctrl.x_bar + rom.B @ u_bar0
    last = shifted_candidate(prob, sol) if debug else None
    info = StepInfo(sol.value, sol.result.status.value, sol.active, u_bar0, shift_viol)
    return u, ControllerState(x_hat, x_bar, last), info
