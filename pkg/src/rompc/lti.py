"""Discrete LTI state-space systems and stability queries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes violate a system's dimension contract."""


def _as_matrix(M, name: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    M = np.array(M, dtype=float, copy=True)
    if M.ndim == 1 and rows is not None and cols is not None and M.size == rows * cols:
        M = M.reshape(rows, cols)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    M.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Discrete-time system ``x+ = A x + B u``, ``y = C x``, ``z = H x``.

    The same type is used for the full-order plant and for reduced-order
    models. Arrays are copied and made read-only on construction.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise DimensionError(f"A must be square, got {A.shape}")
        B = _as_matrix(np.reshape(self.B, (n, -1)) if np.ndim(self.B) == 1 else self.B, "B")
        C = _as_matrix(np.atleast_2d(self.C), "C")
        H = _as_matrix(np.atleast_2d(self.H), "H")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        if H.shape[1] != n:
            raise DimensionError(f"H has {H.shape[1]} columns, expected {n}")
        for name, val in (("A", A), ("B", B), ("C", C), ("H", H)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def o(self) -> int:
        return self.H.shape[0]

    def to_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m, "p": self.p, "o": self.o,
            "A": self.A.tolist(), "B": self.B.tolist(),
            "C": self.C.tolist(), "H": self.H.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpace":
        n, m, p, o = (int(d[k]) for k in ("n", "m", "p", "o"))
        sys = cls(
            np.reshape(np.asarray(d["A"], dtype=float), (n, n)),
            np.reshape(np.asarray(d["B"], dtype=float), (n, m)),
            np.reshape(np.asarray(d["C"], dtype=float), (p, n)),
            np.reshape(np.asarray(d["H"], dtype=float), (o, n)),
        )
        return sys

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateSpace):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCH")

    __hash__ = None


def _vec(v, size: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != size:
        raise DimensionError(f"{name} has length {v.size}, expected {size}")
    return v


def step(sys: StateSpace, x, u, w=None) -> np.ndarray:
    """One step of the state recursion: ``A x + B u + w``."""
    x = _vec(x, sys.n, "x")
    u = _vec(u, sys.m, "u")
    out = sys.A @ x + sys.B @ u
    if w is not None:
        out = out + _vec(w, sys.n, "w")
    return out


def outputs(sys: StateSpace, x) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free measurement and performance outputs ``(C x, H x)``."""
    x = _vec(x, sys.n, "x")
    return sys.C @ x, sys.H @ x


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if A.size == 0:
        return 0.0
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigenvalue iteration failed for {A.shape} matrix "
            f"(norm {np.linalg.norm(A):.3e}): {exc}"
        ) from exc
    return float(np.max(np.abs(eigs)))


def is_schur(A, tol: float = 1e-9) -> bool:
    """True when every eigenvalue lies strictly inside the circle of radius ``1 - tol``."""
    return spectral_radius(A) < 1.0 - tol


@dataclass(frozen=True)
class TrackingSelector:
    """Row selection ``T`` picking the tracked performance variables."""

    indices: tuple[int, ...]
    o: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("at least one tracked variable is required")
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate tracked indices {idx}")
        if min(idx) < 0 or max(idx) >= self.o:
            raise ValueError(f"tracked indices {idx} out of range for o={self.o}")
        object.__setattr__(self, "indices", idx)

    @property
    def t(self) -> int:
        return len(self.indices)

    @property
    def T(self) -> np.ndarray:
        return np.eye(self.o)[list(self.indices)]

    @classmethod
    def from_matrix(cls, T) -> "TrackingSelector":
        T = np.atleast_2d(np.asarray(T, dtype=float))
        idx = []
        for row in T:
            ones = np.flatnonzero(row == 1.0)
            if len(ones) != 1 or np.count_nonzero(row) != 1:
                raise ValueError("each row of T must be a row of the identity")
            idx.append(int(ones[0]))
        return cls(tuple(idx), T.shape[1])

    def to_dict(self) -> dict:
        return {"indices": list(self.indices), "o": self.o}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackingSelector":
        return cls(tuple(d["indices"]), int(d["o"]))
