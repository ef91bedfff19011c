"""Half-space polytopes: membership, support functions and Pontryagin differences.

Everything here works in H-representation only. Support values come from one
LP each, which is all the set computations downstream need.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lpqp import LinearProgram, Status, solve_lp

DEFAULT_TOL = 1e-7


@dataclass(frozen=True)
class Support:
    """Outcome of ``max dir' x`` over a polytope.

    ``value`` is ``+inf`` for an unbounded direction and ``-inf`` for an empty
    set, so the usual support-function conventions fall out of the arithmetic.
    """

    status: str
    value: float
    maximizer: np.ndarray | None = None

    @property
    def finite(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True, eq=False)
class HPolytope:
    """The set ``{x : A x <= b}``. May be empty or unbounded."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, copy=True)
        b = np.array(self.b, dtype=float, copy=True).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(1, -1) if b.size == 1 else A.reshape(0, -1)
        if A.ndim != 2 or A.shape[0] != b.size:
            raise ValueError(f"A {A.shape} and b {b.shape} are inconsistent")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("polytope data must be finite")
        if A.shape[0] and np.any(np.all(A == 0.0, axis=1)):
            raise ValueError("zero rows are not allowed in A")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    @classmethod
    def universe(cls, dim: int) -> "HPolytope":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "dim": self.dim}

    @classmethod
    def from_dict(cls, d: dict) -> "HPolytope":
        dim = int(d.get("dim", len(d["A"][0]) if d["A"] else 0))
        A = np.asarray(d["A"], dtype=float).reshape(-1, dim)
        return cls(A, np.asarray(d["b"], dtype=float))

    def as_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """``(lb, ub)`` when every face is an axis-aligned bound covering both sides."""
        d = self.dim
        lb = np.full(d, -np.inf)
        ub = np.full(d, np.inf)
        for a, beta in zip(self.A, self.b):
            nz = np.flatnonzero(a)
            if nz.size != 1:
                return None
            i = nz[0]
            if a[i] > 0:
                ub[i] = min(ub[i], beta / a[i])
            else:
                lb[i] = max(lb[i], beta / a[i])
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            return None
        return lb, ub

    def shift(self, c) -> "HPolytope":
        """Translate the set by ``c`` (``P + {c}``)."""
        c = np.asarray(c, dtype=float).reshape(-1)
        return HPolytope(self.A, self.b + self.A @ c)

    def intersect(self, other: "HPolytope") -> "HPolytope":
        _check_dims(self, other)
        return HPolytope(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]))

    def preimage(self, M) -> "HPolytope":
        """``{x : M x in P}``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        AM = self.A @ M
        keep = ~np.all(np.abs(AM) <= 1e-14 * max(1.0, np.abs(self.A).max(initial=1.0)), axis=1)
        if np.any(~keep & (self.b < 0)):
            # some face reads 0 <= b < 0: the preimage is empty
            return HPolytope(np.vstack([np.eye(1, M.shape[1]), -np.eye(1, M.shape[1])]), np.array([-1.0, -1.0]))
        return HPolytope(AM[keep], self.b[keep])

    def __repr__(self) -> str:
        return f"HPolytope(dim={self.dim}, faces={self.n_faces})"


def _check_dims(P: HPolytope, Q: HPolytope) -> None:
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")


def box(lb, ub) -> HPolytope:
    lb = np.asarray(lb, dtype=float).reshape(-1)
    ub = np.asarray(ub, dtype=float).reshape(-1)
    if lb.shape != ub.shape:
        raise ValueError("lb and ub must have equal length")
    if np.any(lb > ub):
        bad = np.flatnonzero(lb > ub)
        raise ValueError(f"lb > ub in coordinates {bad.tolist()}")
    d = lb.size
    return HPolytope(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([ub, -lb]))


def norm_ball_inf(radius: float, dim: int) -> HPolytope:
    return box(-radius * np.ones(dim), radius * np.ones(dim))


def contains(P: HPolytope, x, tol: float = DEFAULT_TOL) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != P.dim:
        raise ValueError(f"point has dimension {x.size}, polytope {P.dim}")
    return bool(np.all(P.A @ x <= P.b + tol))


def support(P: HPolytope, direction) -> Support:
    direction = np.asarray(direction, dtype=float).reshape(-1)
    if direction.size != P.dim:
        raise ValueError(f"direction has dimension {direction.size}, polytope {P.dim}")
    res = solve_lp(LinearProgram(direction, Aineq=P.A, bineq=P.b))
    if res.status is Status.OPTIMAL:
        return Support("optimal", res.objective, res.x)
    if res.status is Status.UNBOUNDED:
        return Support("unbounded", np.inf)
    if res.status is Status.INFEASIBLE:
        return Support("empty", -np.inf)
    raise RuntimeError(f"support LP failed: {res.detail}")


def linear_image_support(P: HPolytope, M, direction) -> float:
    """Support of ``M P`` in ``direction``, i.e. ``h_P(M' direction)``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise ValueError(f"M has {M.shape[1]} columns, polytope dimension {P.dim}")
    mt = M.T @ np.asarray(direction, dtype=float).reshape(-1)
    if not np.any(mt):
        return 0.0 if not is_empty(P) else -np.inf
    return support(P, mt).value


def is_empty(P: HPolytope) -> bool:
    if P.n_faces == 0:
        return False
    res = solve_lp(LinearProgram(np.zeros(P.dim), Aineq=P.A, bineq=P.b))
    if res.status is Status.INFEASIBLE:
        return True
    if res.status is Status.OPTIMAL:
        return False
    raise RuntimeError(f"feasibility LP failed: {res.detail}")


def pontryagin_diff(P: HPolytope, Q: HPolytope) -> HPolytope:
    """``P - Q = {x : x + Q subset of P}`` computed face by face."""
    _check_dims(P, Q)
    if P.n_faces == 0:
        return P
    if is_empty(Q):
        return P
    shrink = np.empty(P.n_faces)
    for i, a in enumerate(P.A):
        s = support(Q, a)
        if not s.finite:
            raise ValueError(f"Q is unbounded along face {i} of P")
        shrink[i] = s.value
    return HPolytope(P.A, P.b - shrink)


def contained_in(P: HPolytope, Q: HPolytope, tol: float = DEFAULT_TOL) -> bool:
    """Whether ``P`` is a subset of ``Q``, checked on every face of ``Q``."""
    _check_dims(P, Q)
    for a, beta in zip(Q.A, Q.b):
        s = support(P, a)
        if s.status == "empty":
            return True
        if s.status == "unbounded" or s.value > beta + tol:
            return False
    return True


def containment_margin(P: HPolytope, Q: HPolytope) -> float:
    """Worst ``b_i - h_P(a_i)`` over the faces of ``Q`` (negative means ``P`` sticks out)."""
    _check_dims(P, Q)
    worst = np.inf
    for a, beta in zip(Q.A, Q.b):
        worst = min(worst, beta - support(P, a).value)
    return float(worst)


def remove_redundant(P: HPolytope, tol: float = 1e-9) -> HPolytope:
    """Drop faces implied by the others (one LP per face).

    Duplicate rows are removed first; an empty polytope is returned unchanged.
    """
    if P.n_faces <= 1:
        return P
    norms = np.linalg.norm(P.A, axis=1)
    An = P.A / norms[:, None]
    bn = P.b / norms
    # exact duplicates after normalization: keep the tightest
    order = np.lexsort((bn, *An.T[::-1]))
    keep_idx = []
    for i in order:
        if keep_idx:
            j = keep_idx[-1]
            if np.allclose(An[i], An[j], atol=1e-12, rtol=0):
                continue
        keep_idx.append(i)
    keep_idx = sorted(keep_idx)
    A, b = An[keep_idx], bn[keep_idx]
    if is_empty(HPolytope(A, b)):
        return P
    keep = np.ones(len(b), dtype=bool)
    for i in range(len(b)):
        mask = keep.copy()
        mask[i] = False
        # relax face i slightly so the LP stays bounded when it is needed
        Ai = np.vstack([A[mask], A[i]])
        bi = np.concatenate([b[mask], [b[i] + 1.0]])
        s = support(HPolytope(Ai, bi), A[i])
        if s.finite and s.value <= b[i] + tol:
            keep[i] = False
    return HPolytope(A[keep], b[keep])


@dataclass(frozen=True)
class DirectionSet:
    """Unit face normals used to build outer polytopic bounds."""

    dirs: np.ndarray

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.dirs, dtype=float))
        if d.shape[0] == 0:
            raise ValueError("direction set must be nonempty")
        if np.abs(np.linalg.norm(d, axis=1) - 1.0).max() > 1e-12:
            raise ValueError("directions must be unit vectors")
        d.setflags(write=False)
        object.__setattr__(self, "dirs", d)

    @property
    def dim(self) -> int:
        return self.dirs.shape[1]

    def __len__(self) -> int:
        return self.dirs.shape[0]

    def __iter__(self):
        return iter(self.dirs)

    def spans_positively(self) -> bool:
        """True when the cone generated by the directions is the whole space."""
        # a polytope built from these normals is bounded iff the normals positively span
        P = HPolytope(self.dirs, np.ones(len(self)))
        return all(support(P, e).finite for e in np.vstack([np.eye(self.dim), -np.eye(self.dim)]))

    @classmethod
    def standard(cls, dim: int, extra: int = 0) -> "DirectionSet":
        """``+/- e_i`` plus ``extra`` deterministic, roughly uniform unit vectors."""
        base = np.vstack([np.eye(dim), -np.eye(dim)])
        # order as +e1, -e1, +e2, -e2, ...
        base = base[np.ravel(np.column_stack([np.arange(dim), np.arange(dim) + dim]))]
        if extra <= 0:
            return cls(base)
        if dim == 2:
            ang = np.pi / (2 * extra) + np.arange(extra) * 2 * np.pi / extra
            more = np.column_stack([np.cos(ang), np.sin(ang)])
        else:
            rng = np.random.default_rng(20190301 + dim)
            more = rng.standard_normal((extra, dim))
            more /= np.linalg.norm(more, axis=1, keepdims=True)
        return cls(np.vstack([base, more]))
