"""Linear and convex quadratic programs behind a single result type.

LPs are solved with HiGHS (through :func:`scipy.optimize.linprog`) and the
returned optimum is re-certified from the dual multipliers. QPs with a
positive definite Hessian go through a dense dual active-set method
(Goldfarb-Idnani) after the equality constraints are eliminated; merely
semidefinite problems fall back to Clarabel followed by an active-set polish.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog

LP_TOL = 1e-8
QP_TOL = 1e-7


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray | None = None
    objective: float | None = None
    # multipliers: ``eq`` free, ``ineq`` >= 0, sign convention of the
    # maximization (LP) or minimization (QP) Lagrangian documented per solver
    dual_eq: np.ndarray | None = None
    dual_ineq: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def _mat(M, ncols: int):
    if M is None:
        return sp.csr_matrix((0, ncols))
    if sp.issparse(M):
        return M.tocsr().astype(float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((0, ncols))
    return M


def _dense(M, ncols: int) -> np.ndarray:
    M = _mat(M, ncols)
    return M.toarray() if sp.issparse(M) else M


def _vec(v, size: int) -> np.ndarray:
    if v is None:
        return np.zeros(size)
    return np.asarray(v, dtype=float).reshape(-1)


def _rows(M) -> int:
    return M.shape[0]


@dataclass
class LinearProgram:
    """``maximize c @ x`` subject to ``Aeq x = beq`` and ``Aineq x <= bineq``.

    All variables are free. Constraint matrices may be dense or scipy sparse.
    """

    c: np.ndarray
    Aeq: object = None
    beq: np.ndarray | None = None
    Aineq: object = None
    bineq: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.c = _vec(self.c, np.size(self.c))
        n = self.c.size
        self.Aeq = _mat(self.Aeq, n)
        self.Aineq = _mat(self.Aineq, n)
        self.beq = _vec(self.beq, _rows(self.Aeq))
        self.bineq = _vec(self.bineq, _rows(self.Aineq))
        for name, M, b in (("eq", self.Aeq, self.beq), ("ineq", self.Aineq, self.bineq)):
            if M.shape[1] != n:
                raise ValueError(f"A{name} has {M.shape[1]} columns, expected {n}")
            if M.shape[0] != b.size:
                raise ValueError(f"A{name} has {M.shape[0]} rows but b{name} has {b.size}")
            data = M.data if sp.issparse(M) else M
            if not (np.all(np.isfinite(data)) and np.all(np.isfinite(b))):
                raise ValueError(f"non-finite data in {name} constraints")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("non-finite cost vector")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class QuadraticProgram:
    """``minimize 0.5 x' P x + q' x`` subject to ``Aeq x = beq``, ``Aineq x <= bineq``."""

    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Aineq: np.ndarray | None = None
    bineq: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = self.P.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P must be square, got {self.P.shape}")
        self.q = _vec(self.q, n)
        if self.q.size != n:
            raise ValueError("q has the wrong length")
        self.Aeq = _dense(self.Aeq, n)
        self.Aineq = _dense(self.Aineq, n)
        self.beq = _vec(self.beq, self.Aeq.shape[0])
        self.bineq = _vec(self.bineq, self.Aineq.shape[0])
        if self.Aeq.shape[0] != self.beq.size or self.Aineq.shape[0] != self.bineq.size:
            raise ValueError("constraint row counts do not match right-hand sides")
        for arr in (self.P, self.q, self.Aeq, self.beq, self.Aineq, self.bineq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite QP data")
        scale = max(1.0, np.abs(self.P).max(initial=0.0))
        if np.abs(self.P - self.P.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("P is not symmetric")
        self.P = 0.5 * (self.P + self.P.T)
        if n and np.linalg.eigvalsh(self.P).min() < -1e-9 * scale:
            raise ValueError("P is not positive semidefinite")

    @property
    def n_vars(self) -> int:
        return self.q.size


# ----------------------------------------------------------------------------
# linear programs


def _certify_lp(lp: LinearProgram, x, y_eq, y_ineq) -> dict:
    """Primal/dual residuals and duality gap for ``max c'x``.

    Dual feasibility: ``c = Aeq' y_eq + Aineq' y_ineq`` with ``y_ineq >= 0``;
    the dual objective ``beq' y_eq + bineq' y_ineq`` upper-bounds ``c'x``.
    """
    obj = float(lp.c @ x)
    r_eq = lp.Aeq @ x - lp.beq
    r_in = lp.Aineq @ x - lp.bineq
    stat = lp.c - lp.Aeq.T @ y_eq - lp.Aineq.T @ y_ineq
    dual_obj = float(lp.beq @ y_eq + lp.bineq @ y_ineq)
    scale_x = 1.0 + np.abs(x).max(initial=0.0)
    scale_b = 1.0 + max(np.abs(lp.beq).max(initial=0.0), np.abs(lp.bineq).max(initial=0.0))
    scale_c = 1.0 + np.abs(lp.c).max(initial=0.0)
    return {
        "primal_eq": float(np.abs(r_eq).max(initial=0.0)) / scale_b,
        "primal_ineq": float(np.maximum(r_in, 0.0).max(initial=0.0)) / scale_b,
        "dual_sign": float(np.maximum(-y_ineq, 0.0).max(initial=0.0)),
        "dual_stationarity": float(np.abs(stat).max(initial=0.0)) / scale_c,
        "gap": abs(dual_obj - obj) / (1.0 + abs(obj)),
        "dual_objective": dual_obj,
        "x_scale": float(scale_x),
    }


def _lp_certified(res: dict, tol: float) -> bool:
    return (
        res["primal_eq"] <= tol
        and res["primal_ineq"] <= tol
        and res["dual_sign"] <= tol
        and res["dual_stationarity"] <= tol
        and res["gap"] <= tol
    )


_HIGHS_ATTEMPTS = (
    ("highs-ds", {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}),
    ("highs-ipm", {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}),
    ("highs", {}),
)


def solve_lp(lp: LinearProgram, tol: float = LP_TOL) -> SolveResult:
    """Solve ``lp`` to certified optimality.

    An ``OPTIMAL`` result carries the HiGHS primal point together with dual
    multipliers whose objective matches within ``tol * (1 + |obj|)``.
    ``INFEASIBLE``/``UNBOUNDED`` are HiGHS's own classifications.
    """
    n = lp.n_vars
    A_ub = lp.Aineq if lp.Aineq.shape[0] else None
    A_eq = lp.Aeq if lp.Aeq.shape[0] else None
    last_detail = ""
    for method, options in _HIGHS_ATTEMPTS:
        res = linprog(
            -lp.c,
            A_ub=A_ub, b_ub=lp.bineq if A_ub is not None else None,
            A_eq=A_eq, b_eq=lp.beq if A_eq is not None else None,
            bounds=(None, None), method=method, options=options,
        )
        if res.status == 2:
            return SolveResult(Status.INFEASIBLE, detail=res.message)
        if res.status == 3:
            return SolveResult(Status.UNBOUNDED, detail=res.message)
        if res.status != 0 or res.x is None:
            last_detail = f"{method}: {res.message}"
            continue
        x = np.asarray(res.x, dtype=float)
        # linprog minimizes -c'x; its marginals are d(min)/d(b)
        y_eq = -np.asarray(res.eqlin.marginals) if A_eq is not None else np.zeros(0)
        y_in = -np.asarray(res.ineqlin.marginals) if A_ub is not None else np.zeros(0)
        cert = _certify_lp(lp, x, y_eq, y_in)
        if _lp_certified(cert, tol):
            return SolveResult(
                Status.OPTIMAL, x=x, objective=float(lp.c @ x),
                dual_eq=y_eq, dual_ineq=y_in, residuals=cert,
                iterations=int(getattr(res, "nit", 0)),
            )
        last_detail = f"{method}: certification failed {cert}"
    return SolveResult(Status.NUMERICAL_FAILURE, detail=last_detail or "no solver attempt succeeded")


# ----------------------------------------------------------------------------
# quadratic programs


def _eliminate_equalities(Aeq: np.ndarray, beq: np.ndarray, n: int):
    """Return ``(x_p, Z)`` with ``{x : Aeq x = beq} = {x_p + Z y}``, or ``None`` if inconsistent."""
    if Aeq.shape[0] == 0:
        return np.zeros(n), np.eye(n)
    Q, R, piv = sla.qr(Aeq.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(Aeq.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    Q1, Z = Q[:, :rank], Q[:, rank:]
    # Aeq[piv] = R' Q'  ->  solve the leading rank rows, check the rest
    b_piv = beq[piv]
    y = sla.solve_triangular(R[:rank, :rank].T, b_piv[:rank], lower=True)
    x_p = Q1 @ y
    resid = Aeq @ x_p - beq
    if np.abs(resid).max(initial=0.0) > 1e-9 * (1.0 + np.abs(beq).max(initial=0.0)):
        return None
    return x_p, Z


def _goldfarb_idnani(G, g, C, b, tol=1e-12, max_iter=None):
    """Dual active-set method for ``min 0.5 y'Gy + g'y`` s.t. ``C y >= b`` (G positive definite).

    Returns ``(status, y, multipliers, iterations)``.
    """
    n = G.shape[0]
    m = C.shape[0]
    L = np.linalg.cholesky(G)

    def G_solve(v):
        return sla.cho_solve((L, True), v)

    y = -G_solve(g)
    lam = np.zeros(m)
    if m == 0:
        return Status.OPTIMAL, y, lam, 0
    row_scale = np.maximum(np.abs(C).max(axis=1), 1e-300)
    Cs = C / row_scale[:, None]
    bs = b / row_scale
    feas_tol = tol * (1.0 + np.abs(bs).max(initial=0.0))
    active: list[int] = []
    u = np.zeros(0)
    GinvN = np.zeros((n, 0))
    max_iter = max_iter or 50 * (m + n) + 100
    it = 0
    while True:
        s = Cs @ y - bs
        if active:
            s[active] = np.inf
        p = int(np.argmin(s))
        if s[p] >= -feas_tol:
            lam[active] = u
            return Status.OPTIMAL, y, lam / row_scale, it
        n_p = Cs[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                return Status.NUMERICAL_FAILURE, y, lam, it
            if active:
                N = Cs[active].T
                M = N.T @ GinvN
                Gn = G_solve(n_p)
                try:
                    r = np.linalg.solve(M, N.T @ Gn)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(M, N.T @ Gn, rcond=None)[0]
                z = Gn - GinvN @ r
            else:
                r = np.zeros(0)
                z = G_solve(n_p)
            zn = float(z @ n_p)
            # partial step limited by dual feasibility of the current active set
            t1, k = np.inf, -1
            for j in range(len(active)):
                if r[j] > 1e-14 and u_plus[j] / r[j] < t1:
                    t1, k = u_plus[j] / r[j], j
            sp_ = float(n_p @ y - bs[p])
            t2 = -sp_ / zn if zn > 1e-14 * (1.0 + float(n_p @ G_solve(n_p))) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return Status.INFEASIBLE, y, lam, it
            if np.isinf(t2):
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                del active[k]
                u_plus = np.delete(u_plus, k)
                GinvN = np.delete(GinvN, k, axis=1)
                continue
            y = y + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t == t2:
                active.append(p)
                u = u_plus
                GinvN = np.column_stack([GinvN, G_solve(n_p)])
                break
            del active[k]
            u_plus = np.delete(u_plus, k)
            GinvN = np.delete(GinvN, k, axis=1)


def _qp_residuals(qp: QuadraticProgram, x, nu, lam) -> dict:
    """KKT residuals for the Lagrangian ``f + nu'(Aeq x - beq) + lam'(Aineq x - bineq)``."""
    grad = qp.P @ x + qp.q
    stat = grad + qp.Aeq.T @ nu + qp.Aineq.T @ lam
    scale = 1.0 + max(np.abs(grad).max(initial=0.0), np.abs(qp.q).max(initial=0.0))
    bscale = 1.0 + max(np.abs(qp.beq).max(initial=0.0), np.abs(qp.bineq).max(initial=0.0))
    slack = qp.Aineq @ x - qp.bineq
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)) / scale,
        "primal_eq": float(np.abs(qp.Aeq @ x - qp.beq).max(initial=0.0)) / bscale,
        "primal_ineq": float(np.maximum(slack, 0.0).max(initial=0.0)) / bscale,
        "dual_sign": float(np.maximum(-lam, 0.0).max(initial=0.0)),
        "complementarity": float(np.abs(lam * slack).max(initial=0.0)) / (scale * bscale),
    }


def _qp_ok(res: dict, tol: float) -> bool:
    return all(v <= tol for v in res.values())


def _active_set_polish(qp: QuadraticProgram, x0: np.ndarray, lam0: np.ndarray, max_rounds: int = 20):
    """Refine an interior-point answer by re-solving KKT systems on a guessed active set.

    Constraints with negative multipliers are released and violated ones
    added until the guess is self-consistent.
    """
    slack = qp.Aineq @ x0 - qp.bineq
    act = set(np.flatnonzero((lam0 > 1e-7) | (slack > -1e-7 * (1 + np.abs(qp.bineq)))).tolist())
    n = qp.n_vars
    x, nu, lam = x0, np.zeros(qp.beq.size), lam0
    for _ in range(max_rounds):
        idx = np.array(sorted(act), dtype=int)
        A = np.vstack([qp.Aeq, qp.Aineq[idx]])
        b = np.concatenate([qp.beq, qp.bineq[idx]])
        K = np.block([[qp.P, A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
        sol = np.linalg.lstsq(K, np.concatenate([-qp.q, b]), rcond=None)[0]
        x, mult = sol[:n], sol[n:]
        nu = mult[: qp.beq.size]
        lam = np.zeros(qp.bineq.size)
        lam[idx] = mult[qp.beq.size:]
        neg = [i for i in idx if lam[i] < -1e-12]
        viol = np.flatnonzero(qp.Aineq @ x - qp.bineq > 1e-10 * (1 + np.abs(qp.bineq)))
        if not neg and viol.size == 0:
            break
        if neg:
            act.discard(min(neg, key=lambda i: lam[i]))
        act.update(viol.tolist())
    return x, nu, lam


def _solve_qp_clarabel(qp: QuadraticProgram, tol: float) -> SolveResult:
    import clarabel

    n = qp.n_vars
    A = sp.csc_matrix(np.vstack([qp.Aeq, qp.Aineq]))
    b = np.concatenate([qp.beq, qp.bineq])
    cones = []
    if qp.beq.size:
        cones.append(clarabel.ZeroConeT(qp.beq.size))
    if qp.bineq.size:
        cones.append(clarabel.NonnegativeConeT(qp.bineq.size))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    solver = clarabel.DefaultSolver(sp.csc_matrix(np.triu(qp.P)), qp.q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if "Infeasible" in status and "Dual" not in status:
        return SolveResult(Status.INFEASIBLE, detail=status)
    if "DualInfeasible" in status:
        return SolveResult(Status.UNBOUNDED, detail=status)
    if "Solved" not in status:
        return SolveResult(Status.NUMERICAL_FAILURE, detail=status)
    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    nu, lam = z[: qp.beq.size], z[qp.beq.size:]
    x, nu, lam = _active_set_polish(qp, x, lam)
    res = _qp_residuals(qp, x, nu, lam)
    if not _qp_ok(res, tol):
        return SolveResult(Status.NUMERICAL_FAILURE, x=x, residuals=res, detail="KKT check failed after polish")
    obj = float(0.5 * x @ qp.P @ x + qp.q @ x)
    return SolveResult(Status.OPTIMAL, x=x, objective=obj, dual_eq=nu, dual_ineq=lam, residuals=res)


def solve_qp(qp: QuadraticProgram, tol: float = QP_TOL) -> SolveResult:
    """Solve a convex QP.

    The equality constraints are removed through a null-space basis, and the
    remaining inequality-constrained problem is solved exactly by the dual
    active-set method when the reduced Hessian is positive definite.
    """
    n = qp.n_vars
    elim = _eliminate_equalities(qp.Aeq, qp.beq, n)
    if elim is None:
        return SolveResult(Status.INFEASIBLE, detail="inconsistent equality constraints")
    x_p, Z = elim
    G = Z.T @ qp.P @ Z
    G = 0.5 * (G + G.T)
    try:
        if G.size and np.linalg.eigvalsh(G).min() <= 1e-12 * max(1.0, np.abs(G).max()):
            raise np.linalg.LinAlgError("reduced Hessian not positive definite")
        g = Z.T @ (qp.P @ x_p + qp.q)
        C = -qp.Aineq @ Z
        b = -(qp.bineq - qp.Aineq @ x_p)
        status, y, lam, it = _goldfarb_idnani(G, g, C, b)
    except np.linalg.LinAlgError:
        return _solve_qp_clarabel(qp, tol)
    if status is not Status.OPTIMAL:
        return SolveResult(status, iterations=it, detail="dual active-set method")
    x = x_p + Z @ y
    # equality multipliers from the stationarity condition (least squares)
    r = qp.P @ x + qp.q + qp.Aineq.T @ lam
    if qp.beq.size:
        nu = -np.linalg.lstsq(qp.Aeq.T, r, rcond=None)[0]
    else:
        nu = np.zeros(0)
    res = _qp_residuals(qp, x, nu, lam)
    if not _qp_ok(res, tol):
        # ill-conditioned reduced problems can stall the active-set method
        # (including missed infeasibility); the conic solver settles the status
        fallback = _solve_qp_clarabel(qp, tol)
        if fallback.status is not Status.NUMERICAL_FAILURE:
            return fallback
        return SolveResult(Status.NUMERICAL_FAILURE, x=x, residuals=res, iterations=it,
                           detail="KKT residual check failed")
    obj = float(0.5 * x @ qp.P @ x + qp.q @ x)
    return SolveResult(Status.OPTIMAL, x=x, objective=obj, dual_eq=nu, dual_ineq=lam,
                       residuals=res, iterations=it)


# ----------------------------------------------------------------------------
# debug dumps


def _write_matrix(fh, name: str, M) -> None:
    M = sp.coo_matrix(M)
    fh.write(f"{name} {M.shape[0]} {M.shape[1]} {M.nnz}\n")
    order = np.lexsort((M.col, M.row))
    for i, j, v in zip(M.row[order], M.col[order], M.data[order]):
        fh.write(f"{i} {j} {v!r}\n")


def _write_vector(fh, name: str, v) -> None:
    v = np.asarray(v, dtype=float).reshape(-1)
    fh.write(f"{name} {v.size}\n")
    for val in v:
        fh.write(f"{float(val)!r}\n")


def dump_problem(problem, path) -> Path:
    """Write an LP or QP to a plain-text file.

    Layout: a ``TYPE LP|QP`` header line, ``SENSE max|min``, then sections
    in fixed order. Matrices are ``NAME rows cols nnz`` followed by
    zero-based ``i j value`` triplets in row-major order; vectors are
    ``NAME size`` followed by one value per line. LP sections: ``c Aeq beq
    Aineq bineq``; QP sections: ``P q Aeq beq Aineq bineq``.
    """
    path = Path(path)
    with path.open("w") as fh:
        if isinstance(problem, LinearProgram):
            fh.write("TYPE LP\nSENSE max\n")
            _write_vector(fh, "c", problem.c)
        elif isinstance(problem, QuadraticProgram):
            fh.write("TYPE QP\nSENSE min\n")
            _write_matrix(fh, "P", problem.P)
            _write_vector(fh, "q", problem.q)
        else:
            raise TypeError(f"cannot dump {type(problem).__name__}")
        _write_matrix(fh, "Aeq", problem.Aeq)
        _write_vector(fh, "beq", problem.beq)
        _write_matrix(fh, "Aineq", problem.Aineq)
        _write_vector(fh, "bineq", problem.bineq)
    return path
