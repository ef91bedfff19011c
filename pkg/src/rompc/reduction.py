"""Balanced truncation with exact retention of marginally stable modes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .lti import StateSpace, spectral_radius

MARGINAL_TOL = 1e-8


class ReductionError(ValueError):
    pass


def solve_discrete_lyapunov(A, Qs) -> np.ndarray:
    """Solve ``A X A' - X + Qs = 0`` for Schur-stable ``A``.

    Uses the Schur-form (Bartels-Stewart family) solver in SciPy and applies
    one step of iterative refinement on the residual.
    """
    A = np.asarray(A, dtype=float)
    Qs = np.asarray(Qs, dtype=float)
    if A.shape[0] != A.shape[1] or Qs.shape != A.shape:
        raise ValueError("A and Qs must be square of equal size")
    if A.size == 0:
        return np.zeros_like(A)
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise ValueError(f"A is not Schur stable (spectral radius {rho:.6g})")
    Qs = 0.5 * (Qs + Qs.T)
    X = sla.solve_discrete_lyapunov(A, Qs, method="bilinear")
    X = 0.5 * (X + X.T)
    R = A @ X @ A.T - X + Qs
    if np.linalg.norm(R) > 1e-14 * (1 + np.linalg.norm(Qs)):
        dX = sla.solve_discrete_lyapunov(A, 0.5 * (R + R.T), method="bilinear")
        X = X + 0.5 * (dX + dX.T)
    return X


def _psd_factor(X: np.ndarray) -> np.ndarray:
    """``F`` with ``F F' = X`` for a symmetric PSD ``X`` (negative round-off clipped)."""
    w, V = np.linalg.eigh(0.5 * (X + X.T))
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


@dataclass(frozen=True)
class ModalSplit:
    """Block-diagonal decomposition into marginal and stable parts.

    ``Tinv @ A @ T`` is ``blockdiag(A_m, A_s)``; the first ``k`` columns of
    ``T`` span the marginal modes.
    """

    A_m: np.ndarray
    B_m: np.ndarray
    C_m: np.ndarray
    H_m: np.ndarray
    A_s: np.ndarray
    B_s: np.ndarray
    C_s: np.ndarray
    H_s: np.ndarray
    T: np.ndarray
    Tinv: np.ndarray

    @property
    def marginal_dim(self) -> int:
        return self.A_m.shape[0]

    @property
    def stable_dim(self) -> int:
        return self.A_s.shape[0]

    def marginal(self) -> StateSpace | None:
        if self.marginal_dim == 0:
            return None
        return StateSpace(self.A_m, self.B_m, self.C_m, self.H_m)

    def stable(self) -> StateSpace | None:
        if self.stable_dim == 0:
            return None
        return StateSpace(self.A_s, self.B_s, self.C_s, self.H_s)


def marginal_split(sys: StateSpace, tol: float = MARGINAL_TOL) -> ModalSplit:
    """Separate modes with ``|lambda| >= 1 - tol`` from the strictly stable rest.

    An ordered real Schur form puts the marginal eigenvalues first; a Sylvester
    solve then removes the coupling block so the two parts are decoupled.
    """
    A = sys.A
    n = sys.n
    eigs = np.linalg.eigvals(A)
    if np.any(np.abs(eigs) > 1.0 + tol):
        worst = eigs[np.argmax(np.abs(eigs))]
        raise ReductionError(f"unstable plants unsupported (eigenvalue {worst:.6g})")
    T_s, U, k = sla.schur(A, output="real", sort=lambda re, im: np.hypot(re, im) >= 1.0 - tol)
    if k == 0:
        T, Tinv = np.eye(n), np.eye(n)
    elif k == n:
        T, Tinv = U, U.T
    else:
        A11, A12, A22 = T_s[:k, :k], T_s[:k, k:], T_s[k:, k:]
        # [[I, X], [0, I]] block-diagonalizes when A11 X - X A22 = -A12
        X = sla.solve_sylvester(A11, -A22, -A12)
        S = np.eye(n)
        S[:k, k:] = X
        Sinv = np.eye(n)
        Sinv[:k, k:] = -X
        T = U @ S
        Tinv = Sinv @ U.T
    Ad = Tinv @ A @ T
    Bd = Tinv @ sys.B
    Cd = sys.C @ T
    Hd = sys.H @ T
    return ModalSplit(
        A_m=Ad[:k, :k], B_m=Bd[:k], C_m=Cd[:, :k], H_m=Hd[:, :k],
        A_s=Ad[k:, k:], B_s=Bd[k:], C_s=Cd[:, k:], H_s=Hd[:, k:],
        T=T, Tinv=Tinv,
    )


@dataclass(frozen=True)
class ReductionResult:
    """Reduced model plus the projection that produced it.

    ``rom.A == W @ A_full @ V`` (and likewise for ``B``, ``C``, ``H``), with
    ``W @ V = I``. ``hankel_values`` are those of the stable part only.
    """

    rom: StateSpace
    hankel_values: np.ndarray
    V: np.ndarray
    W: np.ndarray
    preserved_marginal_dim: int

    def to_dict(self) -> dict:
        return {
            "rom": self.rom.to_dict(),
            "hankel_values": self.hankel_values.tolist(),
            "V": self.V.tolist(),
            "W": self.W.tolist(),
            "preserved_marginal_dim": self.preserved_marginal_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReductionResult":
        rom = StateSpace.from_dict(d["rom"])
        V = np.asarray(d["V"], dtype=float).reshape(-1, rom.n)
        return cls(rom, np.asarray(d["hankel_values"], dtype=float), V,
                   np.asarray(d["W"], dtype=float).reshape(rom.n, -1),
                   int(d["preserved_marginal_dim"]))


def gramians(sys: StateSpace) -> tuple[np.ndarray, np.ndarray]:
    """Controllability (``B B'``) and observability (``[C; H]'[C; H]``) Gramians."""
    CH = np.vstack([sys.C, sys.H])
    Wc = solve_discrete_lyapunov(sys.A, sys.B @ sys.B.T)
    Wo = solve_discrete_lyapunov(sys.A.T, CH.T @ CH)
    return Wc, Wo


def hankel_singular_values(sys: StateSpace) -> np.ndarray:
    Wc, Wo = gramians(sys)
    Lc, Lo = _psd_factor(Wc), _psd_factor(Wo)
    return np.linalg.svd(Lo.T @ Lc, compute_uv=False)


def _balanced_projection(sys: StateSpace, r: int, rank_tol: float):
    Wc, Wo = gramians(sys)
    Lc, Lo = _psd_factor(Wc), _psd_factor(Wo)
    U, s, Vt = np.linalg.svd(Lo.T @ Lc)
    if r > 0 and s[r - 1] <= rank_tol * max(s[0], 1e-300):
        raise ReductionError(
            f"Gramian product rank deficient at order {r}: Hankel value "
            f"sigma_{r} = {s[r - 1]:.3e} (sigma_1 = {s[0]:.3e})"
        )
    s_r = s[:r]
    scale = 1.0 / np.sqrt(s_r)
    V = Lc @ Vt[:r].T * scale
    W = (scale[:, None] * U[:, :r].T) @ Lo.T
    return V, W, s


def balanced_truncation(sys: StateSpace, n: int, tol: float = MARGINAL_TOL,
                        rank_tol: float = 1e-12) -> ReductionResult:
    """Square-root balanced truncation to order ``n``.

    Marginal modes are kept verbatim and excluded from balancing; the stable
    complement is truncated to ``n - k`` states, where ``k`` is the number of
    marginal modes.
    """
    n_full = sys.n
    if not 0 < n < n_full:
        raise ReductionError(f"target order {n} is not a reduction of order {n_full}")
    split = marginal_split(sys, tol)
    k = split.marginal_dim
    if n < k:
        raise ReductionError(f"target order {n} is below the {k} marginal modes that must be kept")
    r = n - k
    if split.stable_dim:
        stable = split.stable()
        Vs, Ws, hsv = _balanced_projection(stable, r, rank_tol)
    else:
        Vs, Ws, hsv = np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0)
    # map back to the original coordinates
    T_m, T_s = split.T[:, :k], split.T[:, k:]
    W_m, W_s = split.Tinv[:k], split.Tinv[k:]
    V = np.hstack([T_m, T_s @ Vs])
    W = np.vstack([W_m, Ws @ W_s])
    A_r = np.zeros((n, n))
    A_r[:k, :k] = split.A_m
    if r:
        A_r[k:, k:] = Ws @ split.A_s @ Vs
    B_r = np.vstack([split.B_m, Ws @ split.B_s]) if r else split.B_m
    C_r = np.hstack([split.C_m, split.C_s @ Vs]) if r else split.C_m
    H_r = np.hstack([split.H_m, split.H_s @ Vs]) if r else split.H_m
    rom = StateSpace(A_r, B_r, C_r, H_r)
    return ReductionResult(rom, hsv, V, W, k)


def frequency_response(sys: StateSpace, omegas, output: str = "CH") -> np.ndarray:
    """``G(e^{jw}) = M (e^{jw} I - A)^{-1} B`` stacked over ``omegas``; ``M`` is ``C``, ``H`` or both."""
    M = {"C": sys.C, "H": sys.H, "CH": np.vstack([sys.C, sys.H])}[output]
    out = []
    eye = np.eye(sys.n)
    for w in np.asarray(omegas, dtype=float):
        out.append(M @ np.linalg.solve(np.exp(1j * w) * eye - sys.A, sys.B))
    return np.array(out)
