"""Offline controller synthesis for the reduced-order MPC.

Covers the LQR terminal ingredients, the tracking and observer gains, the
terminal invariant set, the steady-state target chain and the closed-loop
steady-state certificate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import polytope as pt
from .lti import StateSpace, TrackingSelector, is_schur, spectral_radius
from .polytope import HPolytope

COND_LIMIT = 1e12
SCHUR_TOL = 1e-9


class SynthesisError(ValueError):
    """A synthesis step could not produce a valid result."""


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    N: int

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 1e-12:
                raise ValueError(f"{name} must be positive definite")
        if int(self.N) < 1:
            raise ValueError("horizon N must be at least 1")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "N", int(self.N))


@dataclass(frozen=True)
class Gains:
    """Tracking gain ``K``, observer gain ``L`` and terminal gain ``K_f``."""

    K: np.ndarray
    L: np.ndarray
    K_f: np.ndarray

    def check(self, rom: StateSpace, tol: float = SCHUR_TOL) -> dict:
        radii = {
            "A+BK": spectral_radius(rom.A + rom.B @ self.K),
            "A-LC": spectral_radius(rom.A - self.L @ rom.C),
            "A+BK_f": spectral_radius(rom.A + rom.B @ self.K_f),
        }
        bad = {k: v for k, v in radii.items() if v >= 1.0 - tol}
        if bad:
            raise SynthesisError(f"gains are not stabilizing: {bad}")
        return radii

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "L": self.L.tolist(), "K_f": self.K_f.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Gains":
        return cls(*(np.atleast_2d(np.asarray(d[k], dtype=float)) for k in ("K", "L", "K_f")))


# ----------------------------------------------------------------------------
# gains


def _uncontrollable_modes(A, B, tol=1e-9) -> list[complex]:
    """Eigenvalues on or outside the unit circle that fail the PBH rank test."""
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - tol:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            bad.append(complex(lam))
    return bad


def dare_residual(A, B, Q, R, P) -> float:
    """Relative Frobenius residual of the discrete algebraic Riccati equation."""
    BtP = B.T @ P
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A) + Q
    return float(np.linalg.norm(rhs - P) / max(1.0, np.linalg.norm(P)))


def lqr(rom: StateSpace, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """Infinite-horizon LQR for ``(A, B)``: returns ``(P, K_f)`` with ``u = K_f x``."""
    A, B = rom.A, rom.B
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    bad = _uncontrollable_modes(A, B)
    if bad:
        raise SynthesisError(f"(A, B) is not stabilizable: uncontrollable mode(s) {bad}")
    P = sla.solve_discrete_are(A, B, Q, R)
    P = 0.5 * (P + P.T)
    K_f = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    res = dare_residual(A, B, Q, R, P)
    if res > 1e-8:
        raise SynthesisError(f"DARE residual {res:.2e} exceeds 1e-8")
    if not is_schur(A + B @ K_f, SCHUR_TOL):
        raise SynthesisError("LQR closed loop is not Schur stable")
    return P, K_f


def stage_equality_residual(rom: StateSpace, Q, R, P, K_f) -> float:
    """``||A_K' P A_K + Q + K' R K - P||_F / ||P||_F`` for the LQR pair."""
    AK = rom.A + rom.B @ K_f
    M = AK.T @ P @ AK + Q + K_f.T @ R @ K_f - P
    return float(np.linalg.norm(M) / np.linalg.norm(P))


def observer_gain(rom: StateSpace, Qe=None, Re=None) -> np.ndarray:
    """Luenberger gain from the dual Riccati equation on ``(A', C')``."""
    A, C = rom.A, rom.C
    Qe = np.eye(rom.n) if Qe is None else np.atleast_2d(np.asarray(Qe, dtype=float))
    Re = np.eye(rom.p) if Re is None else np.atleast_2d(np.asarray(Re, dtype=float))
    bad = _uncontrollable_modes(A.T, C.T)
    if bad:
        raise SynthesisError(f"(A, C) is not detectable: unobservable mode(s) {bad}")
    S = sla.solve_discrete_are(A.T, C.T, Qe, Re)
    L = A @ S @ C.T @ np.linalg.inv(C @ S @ C.T + Re)
    if not is_schur(A - L @ C, SCHUR_TOL):
        raise SynthesisError("A - LC is not Schur stable")
    return L


def design_gains(rom: StateSpace, weights: CostWeights, Qe=None, Re=None,
                 K=None) -> tuple[Gains, np.ndarray]:
    """Default gains: ``K = K_f`` (LQR with the MPC weights), ``L`` from the dual DARE.

    Returns the gains and the terminal cost matrix ``P``.
    """
    P, K_f = lqr(rom, weights.Q, weights.R)
    L = observer_gain(rom, Qe, Re)
    gains = Gains(K_f.copy() if K is None else np.atleast_2d(np.asarray(K, dtype=float)), L, K_f)
    gains.check(rom)
    return gains, P


# ----------------------------------------------------------------------------
# steady-state targets


def _solve_checked(M: np.ndarray, rhs: np.ndarray, name: str) -> np.ndarray:
    if M.shape[0] != M.shape[1]:
        raise SynthesisError(f"{name} is not square ({M.shape})")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SynthesisError(f"{name} is rank deficient (condition number {cond:.3e})")
    return np.linalg.solve(M, rhs)


def steady_state_matrix(plant: StateSpace, T: np.ndarray) -> np.ndarray:
    n = plant.n
    return np.block([[plant.A - np.eye(n), plant.B],
                     [T @ plant.H, np.zeros((T.shape[0], plant.m))]])


def controller_steady_matrix(rom: StateSpace, K: np.ndarray) -> np.ndarray:
    n = rom.n
    return np.block([[rom.A - np.eye(n), rom.B], [K, -np.eye(rom.m)]])


def _first_violated_face(P: HPolytope, x, tol=1e-9) -> int | None:
    viol = P.A @ x - P.b
    i = int(np.argmax(viol)) if viol.size else -1
    return i if viol.size and viol[i] > tol else None


def full_order_targets(plant: StateSpace, T: TrackingSelector, r, Z: HPolytope | None = None,
                       U: HPolytope | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Plant steady state ``(x_f_inf, u_inf)`` with ``T H x_f_inf = r``."""
    r = np.asarray(r, dtype=float).reshape(-1)
    Tm = T.T
    if Tm.shape[0] != plant.m:
        raise SynthesisError(f"number of tracked variables ({Tm.shape[0]}) must equal inputs ({plant.m})")
    S_f = steady_state_matrix(plant, Tm)
    sol = _solve_checked(S_f, np.concatenate([np.zeros(plant.n), r]), "S_f")
    x_inf, u_inf = sol[: plant.n], sol[plant.n:]
    res = np.abs(S_f @ sol - np.concatenate([np.zeros(plant.n), r])).max()
    if res > 1e-9 * (1 + np.abs(r).max(initial=0.0)):
        raise SynthesisError(f"steady-state residual {res:.2e} too large")
    if Z is not None:
        face = _first_violated_face(Z, plant.H @ x_inf)
        if face is not None:
            raise SynthesisError(f"setpoint {r.tolist()} is not admissible: H x_f_inf violates face {face} of Z")
    if U is not None:
        face = _first_violated_face(U, u_inf)
        if face is not None:
            raise SynthesisError(f"setpoint {r.tolist()} is not admissible: u_inf violates face {face} of U")
    return x_inf, u_inf


@dataclass(frozen=True)
class TargetChain:
    x_f_inf: np.ndarray
    u_inf: np.ndarray
    x_hat_inf: np.ndarray
    x_bar_inf: np.ndarray
    u_bar_inf: np.ndarray
    r: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in
                ("x_f_inf", "u_inf", "x_hat_inf", "x_bar_inf", "u_bar_inf", "r")}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetChain":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def observer_steady_state(rom: StateSpace, L, plant: StateSpace, x_f_inf, u_inf) -> np.ndarray:
    """Fixed point of the observer fed with the plant's steady output."""
    A_obs = rom.A - L @ rom.C
    rhs = rom.B @ u_inf + L @ plant.C @ x_f_inf
    return np.linalg.solve(np.eye(rom.n) - A_obs, rhs)


def chain_matrix(plant: StateSpace, rom: StateSpace, gains: Gains, T: np.ndarray) -> np.ndarray:
    """The square matrix stacking all three steady-state systems."""
    nf, n, m, t = plant.n, rom.n, plant.m, T.shape[0]
    D = np.linalg.inv(np.eye(n) - (rom.A - gains.L @ rom.C))
    Z = np.zeros
    return np.block([
        [plant.A - np.eye(nf), plant.B, Z((nf, n)), Z((nf, n)), Z((nf, m))],
        [T @ plant.H, Z((t, m)), Z((t, n)), Z((t, n)), Z((t, m))],
        [D @ gains.L @ plant.C, D @ rom.B, -np.eye(n), Z((n, n)), Z((n, m))],
        [Z((n, nf)), Z((n, m)), Z((n, n)), rom.A - np.eye(n), rom.B],
        [Z((m, nf)), np.eye(m), -gains.K, gains.K, -np.eye(m)],
    ])


def rom_targets(rom: StateSpace, gains: Gains, plant: StateSpace, T: TrackingSelector, r,
                Zbar: HPolytope | None = None, Ubar: HPolytope | None = None,
                Z: HPolytope | None = None, U: HPolytope | None = None) -> TargetChain:
    """Targets for the nominal model that make the closed loop settle at ``z^r = r``."""
    r = np.asarray(r, dtype=float).reshape(-1)
    x_f_inf, u_inf = full_order_targets(plant, T, r, Z, U)
    x_hat_inf = observer_steady_state(rom, gains.L, plant, x_f_inf, u_inf)
    S_c = controller_steady_matrix(rom, gains.K)
    rhs = np.concatenate([np.zeros(rom.n), gains.K @ x_hat_inf - u_inf])
    sol = _solve_checked(S_c, rhs, "S_c")
    x_bar_inf, u_bar_inf = sol[: rom.n], sol[rom.n:]
    F = chain_matrix(plant, rom, gains, T.T)
    condF = np.linalg.cond(F)
    if not np.isfinite(condF) or condF > COND_LIMIT:
        raise SynthesisError(f"stacked steady-state matrix F is rank deficient (cond {condF:.3e})")
    if Zbar is not None:
        face = _first_violated_face(Zbar, rom.H @ x_bar_inf)
        if face is not None:
            raise SynthesisError(f"ROM target infeasible: H x_bar_inf violates face {face} of the tightened Z")
    if Ubar is not None:
        face = _first_violated_face(Ubar, u_bar_inf)
        if face is not None:
            raise SynthesisError(f"ROM target infeasible: u_bar_inf violates face {face} of the tightened U")
    return TargetChain(x_f_inf, u_inf, x_hat_inf, x_bar_inf, u_bar_inf, r)


def chain_residuals(plant: StateSpace, rom: StateSpace, gains: Gains, T: TrackingSelector,
                    chain: TargetChain) -> dict:
    Tm = T.T
    S_f = steady_state_matrix(plant, Tm)
    r1 = S_f @ np.concatenate([chain.x_f_inf, chain.u_inf]) - np.concatenate([np.zeros(plant.n), chain.r])
    r2 = chain.x_hat_inf - observer_steady_state(rom, gains.L, plant, chain.x_f_inf, chain.u_inf)
    S_c = controller_steady_matrix(rom, gains.K)
    r3 = S_c @ np.concatenate([chain.x_bar_inf, chain.u_bar_inf]) - np.concatenate(
        [np.zeros(rom.n), gains.K @ chain.x_hat_inf - chain.u_inf])
    return {name: float(np.abs(v).max()) for name, v in (("S_f", r1), ("observer", r2), ("S_c", r3))}


def naive_targets(rom: StateSpace, TH, r) -> tuple[np.ndarray, np.ndarray]:
    """Targets that would put the reduced model itself at the setpoint."""
    TH = np.atleast_2d(np.asarray(TH, dtype=float))
    r = np.asarray(r, dtype=float).reshape(-1)
    M = np.block([[rom.A - np.eye(rom.n), rom.B], [TH, np.zeros((TH.shape[0], rom.m))]])
    sol = _solve_checked(M, np.concatenate([np.zeros(rom.n), r]), "naive steady-state matrix")
    return sol[: rom.n], sol[rom.n:]


@dataclass(frozen=True)
class Certificate:
    S_ss: np.ndarray
    schur: bool
    margin: float


def closed_loop_certificate(plant: StateSpace, rom: StateSpace, gains: Gains) -> Certificate:
    """Stability of the plant/observer error dynamics under ``u = K x_hat``."""
    S_ss = np.block([
        [plant.A, plant.B @ gains.K],
        [gains.L @ plant.C, rom.A - gains.L @ rom.C + rom.B @ gains.K],
    ])
    rho = spectral_radius(S_ss)
    return Certificate(S_ss, rho < 1.0 - SCHUR_TOL, 1.0 - rho)


# ----------------------------------------------------------------------------
# terminal set


def _shifted_constraints(rom: StateSpace, K_f, Zbar: HPolytope, Ubar: HPolytope,
                         x_bar_inf, u_bar_inf) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``F x <= g`` for ``H x in Zbar - H x_bar_inf`` and ``K_f x in Ubar - u_bar_inf``."""
    F1 = Zbar.A @ rom.H
    g1 = Zbar.b - Zbar.A @ (rom.H @ x_bar_inf)
    F2 = Ubar.A @ K_f
    g2 = Ubar.b - Ubar.A @ u_bar_inf
    F = np.vstack([F1, F2])
    g = np.concatenate([g1, g2])
    nz = np.linalg.norm(F, axis=1) > 1e-14
    if np.any(~nz & (g < 0)):
        raise SynthesisError("targets violate the tightened constraints")
    return F[nz], g[nz]


def terminal_set(rom: StateSpace, K_f, Zbar: HPolytope, Ubar: HPolytope, x_bar_inf, u_bar_inf,
                 max_iter: int = 500, tol: float = 1e-9, prune: bool = True) -> HPolytope:
    """Maximal positively invariant set of ``A + B K_f`` under the shifted constraints.

    Builds ``{x : F A_K^i x <= g, i = 0..t}`` and stops at the first ``t`` for
    which the next batch of rows is implied by the current set.
    """
    AK = rom.A + rom.B @ K_f
    F, g = _shifted_constraints(rom, K_f, Zbar, Ubar, np.asarray(x_bar_inf, float),
                                np.asarray(u_bar_inf, float))
    if np.any(g < -tol):
        raise SynthesisError("setpoint too close to the constraint boundary: targets are infeasible")
    rows = [F]
    rhs = [g]
    omega = HPolytope(F, g)
    if pt.is_empty(omega):
        raise SynthesisError("terminal set is empty")
    FA = F
    for _ in range(max_iter):
        FA = FA @ AK
        done = True
        new_rows = []
        for i, a in enumerate(FA):
            if np.linalg.norm(a) <= 1e-14:
                if g[i] < -tol:
                    raise SynthesisError("terminal set is empty")
                continue
            s = pt.support(omega, a)
            if not s.finite or s.value > g[i] + tol:
                done = False
                new_rows.append(i)
        if done:
            out = omega
            if prune:
                out = pt.remove_redundant(out)
            if pt.is_empty(out):
                raise SynthesisError("terminal set is empty")
            return out
        rows.append(FA[new_rows])
        rhs.append(g[new_rows])
        omega = HPolytope(np.vstack(rows), np.concatenate(rhs))
    raise SynthesisError(
        f"terminal set not finitely determined within {max_iter} iterations; "
        "increase the constraint margin or the tolerance"
    )


@dataclass
class TerminalReport:
    invariance_margin: float
    state_margin: float
    input_margin: float
    tol: float = 1e-8
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return min(self.invariance_margin, self.state_margin, self.input_margin) >= -self.tol


def verify_terminal_set(Delta: HPolytope, rom: StateSpace, K_f, Zbar: HPolytope, Ubar: HPolytope,
                        x_bar_inf, u_bar_inf, tol: float = 1e-8) -> TerminalReport:
    """Support-function check of the three terminal-set conditions."""
    AK = rom.A + rom.B @ K_f
    K_f = np.atleast_2d(K_f)
    x_bar_inf = np.asarray(x_bar_inf, float)
    u_bar_inf = np.asarray(u_bar_inf, float)

    def worst(normals, offsets, M):
        m = np.inf
        for a, beta in zip(normals, offsets):
            m = min(m, beta - pt.linear_image_support(Delta, M, a))
        return float(m)

    inv = worst(Delta.A, Delta.b, AK)
    zs = worst(Zbar.A, Zbar.b - Zbar.A @ (rom.H @ x_bar_inf), rom.H)
    us = worst(Ubar.A, Ubar.b - Ubar.A @ u_bar_inf, K_f)
    return TerminalReport(inv, zs, us, tol)
