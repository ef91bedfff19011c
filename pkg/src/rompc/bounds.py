"""Offline error bounds from stacked trajectory LPs.

Each face of the control-error bound ``D``, the total-error bound ``E`` and
the tracking bound ``R`` is the optimal value of one LP over a window of
``tau`` past steps of plant, observer and nominal-model trajectories. The
constraint stack is shared by all directions of a bound; only the cost
changes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import polytope as pt
from .lpqp import LinearProgram, Status, solve_lp
from .lti import StateSpace, TrackingSelector
from .polytope import DirectionSet, HPolytope
from .synthesis import Gains

log = logging.getLogger(__name__)


class BoundsFailure(RuntimeError):
    """An error-bound LP or a set-computation check failed.

    ``reason`` is a short machine-readable tag (``"D_unbounded"``,
    ``"infeasible"``, ``"D_not_in_D0"``, ``"Zbar_empty"``, ...).
    """

    def __init__(self, reason: str, message: str, **data):
        super().__init__(message)
        self.reason = reason
        self.data = data


@dataclass(frozen=True)
class ConstraintSets:
    """Performance, input, process-noise and measurement-noise sets."""

    Z: HPolytope
    U: HPolytope
    W: HPolytope
    V: HPolytope

    def zero_disturbance(self) -> "ConstraintSets":
        return replace(self, W=pt.box(np.zeros(self.W.dim), np.zeros(self.W.dim)),
                       V=pt.box(np.zeros(self.V.dim), np.zeros(self.V.dim)))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in ("Z", "U", "W", "V")}

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintSets":
        return cls(**{k: HPolytope.from_dict(d[k]) for k in ("Z", "U", "W", "V")})


@dataclass(frozen=True)
class BoundSpec:
    tau: int
    D0: HPolytope | None = None
    directions_D: DirectionSet | None = None
    directions_E: DirectionSet | None = None
    directions_R: DirectionSet | None = None
    tau_ss: int = 50
    eps_x: float = 1e-6
    eps_u: float = 1e-6

    def __post_init__(self):
        if int(self.tau) < 1 or int(self.tau_ss) < 1:
            raise ValueError("tau and tau_ss must be positive")
        if not (self.eps_x > 0 and self.eps_u > 0):
            raise ValueError("eps_x and eps_u must be positive")


@dataclass
class BoundResult:
    """A bound polytope with its per-face LP values and maximizing trajectories."""

    kind: str
    poly: HPolytope
    gammas: np.ndarray
    directions: np.ndarray
    witnesses: list[dict] = field(default_factory=list)
    tau: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tau": self.tau,
            "poly": self.poly.to_dict(),
            "gammas": self.gammas.tolist(),
            "directions": self.directions.tolist(),
            "witnesses": [{k: np.asarray(v).tolist() for k, v in w.items()} for w in self.witnesses],
            "extra": {k: np.asarray(v).tolist() for k, v in self.extra.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundResult":
        dirs = np.asarray(d["directions"], dtype=float)
        return cls(
            kind=d["kind"], poly=HPolytope.from_dict(d["poly"]),
            gammas=np.asarray(d["gammas"], dtype=float),
            directions=dirs.reshape(len(d["gammas"]), -1),
            witnesses=[{k: np.asarray(v, dtype=float) for k, v in w.items()} for w in d["witnesses"]],
            tau=int(d["tau"]),
            extra={k: np.asarray(v, dtype=float) for k, v in d.get("extra", {}).items()},
        )


# ----------------------------------------------------------------------------
# sparse assembly helpers


class _Layout:
    """Contiguous variable blocks ``name -> (start, count, size)``."""

    def __init__(self):
        self.blocks: dict[str, tuple[int, int, int]] = {}
        self.n = 0

    def add(self, name: str, count: int, size: int) -> None:
        self.blocks[name] = (self.n, count, size)
        self.n += count * size

    def col(self, name: str, i: int = 0) -> int:
        start, count, size = self.blocks[name]
        if not 0 <= i < count:
            raise IndexError(f"{name}[{i}] out of range ({count})")
        return start + i * size

    def size(self, name: str) -> int:
        return self.blocks[name][2]

    def extract(self, x: np.ndarray, name: str) -> np.ndarray:
        start, count, size = self.blocks[name]
        out = x[start:start + count * size].reshape(count, size)
        return out[0] if name.endswith("_inf") or name == "r" else out

    def names(self, origin: int = 0) -> tuple[str, ...]:
        labels = []
        for name, (_, count, size) in self.blocks.items():
            for i in range(count):
                for j in range(size):
                    labels.append(f"{name}[{origin + i}][{j}]" if count > 1 else f"{name}[{j}]")
        return tuple(labels)


class _Rows:
    """COO accumulator for a block-structured constraint matrix."""

    def __init__(self, n_cols: int):
        self.n_cols = n_cols
        self.r, self.c, self.v = [], [], []
        self.rhs: list[np.ndarray] = []
        self.m = 0

    def add(self, terms, rhs) -> None:
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        k = rhs.size
        if k == 0:
            return
        for col, M in terms:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            if M.shape[0] != k:
                raise ValueError(f"block has {M.shape[0]} rows, expected {k}")
            ii, jj = np.nonzero(M)
            self.r.append(ii + self.m)
            self.c.append(jj + col)
            self.v.append(M[ii, jj])
        self.rhs.append(rhs)
        self.m += k

    def matrix(self) -> sp.csr_matrix:
        if not self.r:
            return sp.csr_matrix((self.m, self.n_cols))
        return sp.coo_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=(self.m, self.n_cols),
        ).tocsr()

    def vector(self) -> np.ndarray:
        return np.concatenate(self.rhs) if self.rhs else np.zeros(0)


def _membership(rows: _Rows, col: int, P: HPolytope, M=None) -> None:
    """Rows for ``M x in P`` on the block starting at ``col``."""
    if P.n_faces == 0:
        return
    A = P.A if M is None else P.A @ M
    rows.add([(col, A)], P.b)


# ----------------------------------------------------------------------------
# D / E / E_hat LP


@dataclass
class ErrorLP:
    """Shared constraint stack for the D/E/E-hat LPs over one window."""

    layout: _Layout
    Aeq: sp.csr_matrix
    beq: np.ndarray
    Aineq: sp.csr_matrix
    bineq: np.ndarray
    plant: StateSpace
    rom: StateSpace
    tau: int
    origin: int = 0

    def objective(self, mode: str, direction) -> np.ndarray:
        th = np.asarray(direction, dtype=float).reshape(-1)
        c = np.zeros(self.layout.n)
        lay, tau = self.layout, self.tau
        nf, n = self.plant.n, self.rom.n
        if mode == "D":
            if th.size != n:
                raise ValueError(f"D-mode direction must have dimension {n}")
            c[lay.col("xhat", tau):lay.col("xhat", tau) + n] += th
            c[lay.col("xbar", tau):lay.col("xbar", tau) + n] -= th
        elif mode in ("E", "E_hat"):
            if th.size != self.plant.o:
                raise ValueError(f"E-mode direction must have dimension {self.plant.o}")
            c[lay.col("xf", tau):lay.col("xf", tau) + nf] += self.plant.H.T @ th
            other = "xbar" if mode == "E" else "xhat"
            c[lay.col(other, tau):lay.col(other, tau) + n] -= self.rom.H.T @ th
        else:
            raise ValueError(f"unknown objective mode {mode!r}")
        return c

    def program(self, mode: str, direction) -> LinearProgram:
        return LinearProgram(self.objective(mode, direction), self.Aeq, self.beq,
                             self.Aineq, self.bineq, names=self.layout.names(self.origin))

    def witness(self, x: np.ndarray) -> dict:
        lay = self.layout
        return {name: lay.extract(x, name) for name in ("xf", "xhat", "xbar", "u", "v", "w", "d")}


def _error_stack(plant: StateSpace, rom: StateSpace, gains: Gains, sets: ConstraintSets,
                 tau: int, D0: HPolytope, origin: int = 0) -> ErrorLP:
    nf, n, m, p = plant.n, rom.n, plant.m, plant.p
    K, L = gains.K, gains.L
    lay = _Layout()
    lay.add("xf", tau + 1, nf)
    lay.add("xhat", tau + 1, n)
    lay.add("xbar", tau + 1, n)
    lay.add("u", tau, m)
    lay.add("v", tau, p)
    lay.add("w", tau, nf)
    lay.add("d", tau, n)
    eq = _Rows(lay.n)
    ineq = _Rows(lay.n)
    A_obs = rom.A - L @ rom.C
    A_nom = rom.A + rom.B @ K
    BK = rom.B @ K
    LCf = L @ plant.C
    for i in range(tau):
        eq.add([(lay.col("xf", i + 1), np.eye(nf)), (lay.col("xf", i), -plant.A),
                (lay.col("u", i), -plant.B), (lay.col("w", i), -np.eye(nf))], np.zeros(nf))
        eq.add([(lay.col("xhat", i + 1), np.eye(n)), (lay.col("xhat", i), -A_obs),
                (lay.col("u", i), -rom.B), (lay.col("xf", i), -LCf), (lay.col("v", i), -L)],
               np.zeros(n))
        eq.add([(lay.col("xbar", i + 1), np.eye(n)), (lay.col("xbar", i), -A_nom),
                (lay.col("u", i), -rom.B), (lay.col("xhat", i), BK)], np.zeros(n))
        eq.add([(lay.col("d", i), np.eye(n)), (lay.col("xhat", i), -np.eye(n)),
                (lay.col("xbar", i), np.eye(n))], np.zeros(n))
        _membership(ineq, lay.col("xf", i), sets.Z, plant.H)
        _membership(ineq, lay.col("u", i), sets.U)
        _membership(ineq, lay.col("v", i), sets.V)
        _membership(ineq, lay.col("w", i), sets.W)
        _membership(ineq, lay.col("xbar", i), sets.Z, rom.H)
        _membership(ineq, lay.col("d", i), D0)
    return ErrorLP(lay, eq.matrix(), eq.vector(), ineq.matrix(), ineq.vector(), plant, rom, tau, origin)


def default_D0(U: HPolytope, K) -> HPolytope:
    """``{d : K d in U}``."""
    return U.preimage(K)


def build_error_lp(plant: StateSpace, rom: StateSpace, gains: Gains, Z: HPolytope, U: HPolytope,
                   V: HPolytope, W: HPolytope, spec: BoundSpec, objective: str, direction,
                   origin: int = 0) -> LinearProgram:
    """The LP whose optimum is one face offset of ``D`` (``objective="D"``) or ``E`` (``"E"``).

    ``origin`` only relabels the time indices in ``LinearProgram.names``.
    """
    sets = ConstraintSets(Z, U, W, V)
    D0 = spec.D0 if spec.D0 is not None else default_D0(U, gains.K)
    stack = _error_stack(plant, rom, gains, sets, int(spec.tau), D0, origin)
    return stack.program(objective, direction)


def _solve_faces(stack, mode: str, directions: np.ndarray, label: str) -> tuple[np.ndarray, list[dict]]:
    gammas = np.empty(len(directions))
    witnesses = []
    for l, th in enumerate(directions):
        res = solve_lp(stack.program(mode, th))
        if res.status is Status.UNBOUNDED:
            raise BoundsFailure(f"{label}_unbounded", f"{label} unbounded along direction {l} ({th.tolist()})",
                                face=l)
        if res.status is Status.INFEASIBLE:
            raise BoundsFailure("infeasible", f"{label} LP infeasible: inconsistent constraint data", face=l)
        if not res.ok:
            raise BoundsFailure("numerical", f"{label} LP failed on direction {l}: {res.detail}", face=l)
        # the certified dual objective upper-bounds the true optimum
        gammas[l] = max(res.objective, res.residuals.get("dual_objective", res.objective))
        witnesses.append(stack.witness(res.x))
    return gammas, witnesses


def _dirs(ds: DirectionSet | None, dim: int) -> np.ndarray:
    return (ds if ds is not None else DirectionSet.standard(dim)).dirs


def _stack_for(plant, rom, gains, sets, spec):
    D0 = spec.D0 if spec.D0 is not None else default_D0(sets.U, gains.K)
    return _error_stack(plant, rom, gains, sets, int(spec.tau), D0), D0


def compute_D(plant: StateSpace, rom: StateSpace, gains: Gains, sets: ConstraintSets,
              spec: BoundSpec, _stack=None) -> BoundResult:
    """Polytope bounding the control error ``x_hat - x_bar``."""
    stack = _stack or _stack_for(plant, rom, gains, sets, spec)[0]
    dirs = _dirs(spec.directions_D, rom.n)
    gammas, wit = _solve_faces(stack, "D", dirs, "D")
    return BoundResult("D", HPolytope(dirs, gammas), gammas, dirs, wit, int(spec.tau))


def compute_E(plant: StateSpace, rom: StateSpace, gains: Gains, sets: ConstraintSets,
              spec: BoundSpec, _stack=None) -> BoundResult:
    """Polytope bounding the total error ``H_f x_f - H x_bar`` directly."""
    stack = _stack or _stack_for(plant, rom, gains, sets, spec)[0]
    dirs = _dirs(spec.directions_E, plant.o)
    gammas, wit = _solve_faces(stack, "E", dirs, "E")
    return BoundResult("E", HPolytope(dirs, gammas), gammas, dirs, wit, int(spec.tau))


def compute_E_combined_baseline(plant: StateSpace, rom: StateSpace, gains: Gains,
                                sets: ConstraintSets, spec: BoundSpec, D: BoundResult,
                                _stack=None) -> BoundResult:
    """Face offsets of ``E_hat + H D``, evaluated as ``gamma_hat + h_{HD}``.

    ``E_hat`` bounds the estimation error ``H_f x_f - H x_hat`` with the same
    constraint stack.
    """
    stack = _stack or _stack_for(plant, rom, gains, sets, spec)[0]
    dirs = _dirs(spec.directions_E, plant.o)
    g_hat, wit = _solve_faces(stack, "E_hat", dirs, "E_hat")
    hd = np.array([pt.linear_image_support(D.poly, rom.H, th) for th in dirs])
    gammas = g_hat + hd
    return BoundResult("E_combined", HPolytope(dirs, gammas), gammas, dirs, wit, int(spec.tau),
                       extra={"gamma_hat": g_hat, "h_HD": hd})


# ----------------------------------------------------------------------------
# set computation and window escalation


@dataclass
class SetsResult:
    D0: HPolytope
    D: BoundResult
    E: BoundResult
    Zbar: HPolytope
    Ubar: HPolytope
    tau: int


def tighten_input(U: HPolytope, K, D: HPolytope) -> HPolytope:
    """``U - K D`` with faces from ``h_D(K' a)``."""
    K = np.atleast_2d(K)
    shrink = np.array([pt.linear_image_support(D, K, a) for a in U.A])
    if not np.all(np.isfinite(shrink)):
        raise BoundsFailure("KD_unbounded", "K D is unbounded along a face of U")
    return HPolytope(U.A, U.b - shrink)


def directions_with_normals(base: DirectionSet, P: HPolytope, tol: float = 1e-9) -> DirectionSet:
    """``base`` extended by the unit face normals of ``P`` not already present.

    Bounding ``D`` along the faces of ``D0`` makes the ``D in D0`` test and
    the input tightening exact instead of relying on a box outer bound.
    """
    dirs = [d for d in base.dirs]
    for a in P.A:
        u = a / np.linalg.norm(a)
        if not any(np.abs(u - d).max() <= tol for d in dirs):
            dirs.append(u)
    return DirectionSet(np.array(dirs))


def compute_sets(plant: StateSpace, rom: StateSpace, gains: Gains, sets: ConstraintSets,
                 tau: int, directions_D: DirectionSet | None = None,
                 directions_E: DirectionSet | None = None) -> SetsResult:
    """One pass of the set computation for a fixed window length ``tau``.

    Raises :class:`BoundsFailure` when ``D`` is not inside ``D0`` or the
    tightened performance set is empty.
    """
    D0 = default_D0(sets.U, gains.K)
    if directions_D is None:
        directions_D = directions_with_normals(DirectionSet.standard(rom.n), D0)
    spec = BoundSpec(tau=tau, D0=D0, directions_D=directions_D, directions_E=directions_E)
    stack = _error_stack(plant, rom, gains, sets, tau, D0)
    D = compute_D(plant, rom, gains, sets, spec, _stack=stack)
    E = compute_E(plant, rom, gains, sets, spec, _stack=stack)
    Zbar = pt.pontryagin_diff(sets.Z, E.poly)
    if not pt.contained_in(D.poly, D0):
        raise BoundsFailure("D_not_in_D0", f"D is not contained in D0 (tau={tau})", D=D, E=E)
    if pt.is_empty(Zbar):
        raise BoundsFailure("Zbar_empty", f"tightened performance set is empty (tau={tau})", D=D, E=E)
    Ubar = tighten_input(sets.U, gains.K, D.poly)
    return SetsResult(D0, D, E, Zbar, Ubar, tau)


@dataclass
class EscalationResult:
    result: SetsResult | None
    attempts: list[tuple[int, str]]
    diagnosis: str | None = None


def escalate_tau(plant: StateSpace, rom: StateSpace, gains: Gains, sets: ConstraintSets,
                 tau0: int, tau_max: int, keep_tightening: bool = False,
                 directions_D: DirectionSet | None = None,
                 directions_E: DirectionSet | None = None,
                 diagnose: bool = True) -> EscalationResult:
    """Run the set computation for ``tau0, 2 tau0, 4 tau0, ...`` up to ``tau_max``.

    Returns the first success, or with ``keep_tightening`` the success at the
    largest ``tau`` tried. When every ``tau`` fails and ``diagnose`` is set,
    the procedure is repeated with zero disturbances: success there means the
    disturbances are too large, failure means the reduced model should be
    redesigned.
    """
    attempts = []
    best = None
    tau = int(tau0)
    while tau <= tau_max:
        try:
            res = compute_sets(plant, rom, gains, sets, tau, directions_D, directions_E)
        except BoundsFailure as exc:
            attempts.append((tau, exc.reason))
            log.info("tau=%d failed: %s", tau, exc)
        else:
            attempts.append((tau, "ok"))
            best = res
            if not keep_tightening:
                break
        tau *= 2
    if best is not None or not diagnose:
        return EscalationResult(best, attempts)
    zero = escalate_tau(plant, rom, gains, sets.zero_disturbance(), tau0, tau_max,
                        directions_D=directions_D, directions_E=directions_E, diagnose=False)
    diagnosis = "disturbances" if zero.result is not None else "reduced_model"
    return EscalationResult(None, attempts, diagnosis)


# ----------------------------------------------------------------------------
# tracking bound R


@dataclass
class TrackingLP:
    layout: _Layout
    Aeq: sp.csr_matrix
    beq: np.ndarray
    Aineq: sp.csr_matrix
    bineq: np.ndarray
    plant: StateSpace
    T: np.ndarray
    tau: int

    def objective(self, direction) -> np.ndarray:
        th = np.asarray(direction, dtype=float).reshape(-1)
        if th.size != self.T.shape[0]:
            raise ValueError(f"R direction must have dimension {self.T.shape[0]}")
        c = np.zeros(self.layout.n)
        col = self.layout.col("xf", self.tau)
        c[col:col + self.plant.n] += (self.T @ self.plant.H).T @ th
        rc = self.layout.col("r")
        c[rc:rc + th.size] -= th
        return c

    def program(self, direction) -> LinearProgram:
        return LinearProgram(self.objective(direction), self.Aeq, self.beq, self.Aineq, self.bineq)

    def witness(self, x: np.ndarray) -> dict:
        lay = self.layout
        names = ("xf", "xhat", "xbar", "ubar", "u", "v", "w", "r",
                 "xf_inf", "u_inf", "xhat_inf", "xbar_inf", "ubar_inf")
        return {name: lay.extract(x, name) for name in names}


def _tracking_stack(plant, rom, gains, sets, T: np.ndarray, tau_ss: int, D: HPolytope,
                    Zbar: HPolytope, Ubar: HPolytope, eps_x: float, eps_u: float) -> TrackingLP:
    nf, n, m, p, t = plant.n, rom.n, plant.m, plant.p, T.shape[0]
    K, L = gains.K, gains.L
    lay = _Layout()
    lay.add("xf", tau_ss + 1, nf)
    lay.add("xhat", tau_ss + 1, n)
    lay.add("xbar", tau_ss + 1, n)
    lay.add("ubar", tau_ss, m)
    lay.add("u", tau_ss, m)
    lay.add("v", tau_ss, p)
    lay.add("w", tau_ss, nf)
    lay.add("r", 1, t)
    lay.add("xf_inf", 1, nf)
    lay.add("u_inf", 1, m)
    lay.add("xhat_inf", 1, n)
    lay.add("xbar_inf", 1, n)
    lay.add("ubar_inf", 1, m)
    eq = _Rows(lay.n)
    ineq = _Rows(lay.n)
    A_obs = rom.A - L @ rom.C
    LCf = L @ plant.C
    I_n, I_m = np.eye(n), np.eye(m)
    for i in range(tau_ss):
        eq.add([(lay.col("xf", i + 1), np.eye(nf)), (lay.col("xf", i), -plant.A),
                (lay.col("u", i), -plant.B), (lay.col("w", i), -np.eye(nf))], np.zeros(nf))
        eq.add([(lay.col("xhat", i + 1), I_n), (lay.col("xhat", i), -A_obs),
                (lay.col("u", i), -rom.B), (lay.col("xf", i), -LCf), (lay.col("v", i), -L)],
               np.zeros(n))
        eq.add([(lay.col("u", i), I_m), (lay.col("ubar", i), -I_m),
                (lay.col("xhat", i), -K), (lay.col("xbar", i), K)], np.zeros(m))
        # |ubar_i - ubar_inf| <= eps_u
        ineq.add([(lay.col("ubar", i), I_m), (lay.col("ubar_inf"), -I_m)], eps_u * np.ones(m))
        ineq.add([(lay.col("ubar", i), -I_m), (lay.col("ubar_inf"), I_m)], eps_u * np.ones(m))
        _membership(ineq, lay.col("v", i), sets.V)
        _membership(ineq, lay.col("w", i), sets.W)
    for j in range(tau_ss + 1):
        ineq.add([(lay.col("xbar", j), I_n), (lay.col("xbar_inf"), -I_n)], eps_x * np.ones(n))
        ineq.add([(lay.col("xbar", j), -I_n), (lay.col("xbar_inf"), I_n)], eps_x * np.ones(n))
        if D.n_faces:
            ineq.add([(lay.col("xhat", j), D.A), (lay.col("xbar", j), -D.A)], D.b)
        _membership(ineq, lay.col("xf", j), sets.Z, plant.H)
    # steady-state chain as equality rows
    eq.add([(lay.col("xf_inf"), plant.A - np.eye(nf)), (lay.col("u_inf"), plant.B)], np.zeros(nf))
    eq.add([(lay.col("xf_inf"), T @ plant.H), (lay.col("r"), -np.eye(t))], np.zeros(t))
    eq.add([(lay.col("xhat_inf"), I_n - A_obs), (lay.col("u_inf"), -rom.B),
            (lay.col("xf_inf"), -LCf)], np.zeros(n))
    eq.add([(lay.col("xbar_inf"), rom.A - I_n), (lay.col("ubar_inf"), rom.B)], np.zeros(n))
    eq.add([(lay.col("xbar_inf"), K), (lay.col("ubar_inf"), -I_m),
            (lay.col("xhat_inf"), -K), (lay.col("u_inf"), I_m)], np.zeros(m))
    _membership(ineq, lay.col("xf_inf"), sets.Z, plant.H)
    _membership(ineq, lay.col("u_inf"), sets.U)
    _membership(ineq, lay.col("xbar_inf"), Zbar, rom.H)
    _membership(ineq, lay.col("ubar_inf"), Ubar)
    return TrackingLP(lay, eq.matrix(), eq.vector(), ineq.matrix(), ineq.vector(), plant, T, tau_ss)


def build_tracking_lp(plant, rom, gains, sets, T: TrackingSelector, spec: BoundSpec,
                      Zbar: HPolytope, Ubar: HPolytope, D: HPolytope, direction) -> LinearProgram:
    stack = _tracking_stack(plant, rom, gains, sets, T.T, int(spec.tau_ss), D, Zbar, Ubar,
                            spec.eps_x, spec.eps_u)
    return stack.program(direction)


def compute_R(plant: StateSpace, rom: StateSpace, gains: Gains, sets: ConstraintSets,
              T: TrackingSelector, spec: BoundSpec, Zbar: HPolytope, Ubar: HPolytope,
              D: HPolytope) -> BoundResult:
    """Polytope ``R`` with ``z^r - r in R`` once the nominal MPC has converged.

    The setpoint is itself a decision variable, so ``R`` holds for every
    admissible setpoint.
    """
    stack = _tracking_stack(plant, rom, gains, sets, T.T, int(spec.tau_ss), D, Zbar, Ubar,
                            spec.eps_x, spec.eps_u)
    dirs = _dirs(spec.directions_R, T.t)
    gammas = np.empty(len(dirs))
    witnesses = []
    for l, th in enumerate(dirs):
        res = solve_lp(stack.program(th))
        if res.status is Status.UNBOUNDED:
            raise BoundsFailure("R_unbounded", f"R unbounded along direction {l}: eps or D too loose", face=l)
        if res.status is Status.INFEASIBLE:
            raise BoundsFailure("no_feasible_setpoint",
                                "R LP infeasible: no feasible setpoint for the constraint sets", face=l)
        if not res.ok:
            raise BoundsFailure("numerical", f"R LP failed on direction {l}: {res.detail}", face=l)
        gammas[l] = max(res.objective, res.residuals.get("dual_objective", res.objective))
        witnesses.append(stack.witness(res.x))
    return BoundResult("R", HPolytope(dirs, gammas), gammas, dirs, witnesses, int(spec.tau_ss),
                       extra={"eps_x": spec.eps_x, "eps_u": spec.eps_u})


# ----------------------------------------------------------------------------
# witnesses


def extract_witness(result: BoundResult, face: int) -> dict:
    """Disturbance sequences and initial states of one face's maximizer.

    The returned dict is a replay scenario: ``w``, ``v`` (one row per step),
    ``u`` (and ``ubar`` for R), the initial states and the face metadata.
    """
    if not result.witnesses:
        raise ValueError(f"{result.kind} result carries no witnesses")
    if not 0 <= face < len(result.witnesses):
        raise IndexError(f"face {face} out of range ({len(result.witnesses)} faces)")
    w = result.witnesses[face]
    scen = {
        "kind": result.kind,
        "face": int(face),
        "direction": np.asarray(result.directions[face]).tolist(),
        "gamma": float(result.gammas[face]),
        "tau": int(result.tau),
        "w": np.asarray(w["w"]).tolist(),
        "v": np.asarray(w["v"]).tolist(),
        "u": np.asarray(w["u"]).tolist(),
        "xf0": np.asarray(w["xf"][0]).tolist(),
        "xhat0": np.asarray(w["xhat"][0]).tolist(),
        "xbar0": np.asarray(w["xbar"][0]).tolist(),
    }
    if result.kind == "R":
        scen["ubar"] = np.asarray(w["ubar"]).tolist()
        scen["xbar"] = np.asarray(w["xbar"]).tolist()
        for k in ("r", "xf_inf", "u_inf", "xhat_inf", "xbar_inf", "ubar_inf"):
            scen[k] = np.asarray(w[k]).tolist()
    return scen
