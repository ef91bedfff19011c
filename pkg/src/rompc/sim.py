"""Closed-loop simulation: disturbance generators, the control loop, traces and checkers."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import polytope as pt
from .controller import ControllerState, ROMPCProblem, RompcInfeasible, control_step
from .lti import StateSpace
from .polytope import HPolytope
from .synthesis import Gains, TargetChain

HIT_AND_RUN_BURN_IN = 50


# ----------------------------------------------------------------------------
# disturbances


def _box_or_none(P: HPolytope):
    box = P.as_box()
    if box is None or not (np.all(np.isfinite(box[0])) and np.all(np.isfinite(box[1]))):
        return None
    return box


class _HitAndRun:
    """Uniform sampler on a bounded polytope by hit-and-run with a fixed burn-in."""

    def __init__(self, P: HPolytope, rng: np.random.Generator, burn_in: int = HIT_AND_RUN_BURN_IN):
        self.P, self.rng = P, rng
        self.x = self._interior_point(P)
        for _ in range(burn_in):
            self.draw()

    @staticmethod
    def _interior_point(P: HPolytope) -> np.ndarray:
        from scipy.optimize import linprog

        norms = np.linalg.norm(P.A, axis=1)
        c = np.zeros(P.dim + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=np.hstack([P.A, norms[:, None]]), b_ub=P.b,
                      bounds=[(None, None)] * P.dim + [(0, None)], method="highs")
        if res.status != 0 or res.x[-1] <= 0:
            raise ValueError("polytope has no interior for sampling")
        return res.x[:-1]

    def draw(self) -> np.ndarray:
        d = self.rng.standard_normal(self.P.dim)
        d /= np.linalg.norm(d)
        Ad = self.P.A @ d
        slack = self.P.b - self.P.A @ self.x
        with np.errstate(divide="ignore"):
            t = slack / Ad
        hi = np.min(t[Ad > 1e-14], initial=np.inf)
        lo = np.max(t[Ad < -1e-14], initial=-np.inf)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("cannot sample an unbounded polytope")
        self.x = self.x + self.rng.uniform(lo, hi) * d
        return self.x.copy()


@dataclass
class DisturbanceModel:
    """Source of the process disturbance ``w`` and measurement noise ``v``.

    ``kind`` is one of ``zero``, ``uniform``, ``vertex`` and ``replay``.
    ``uniform`` draws i.i.d. samples, box-natively on ``center +- half``
    when those are given (or when the set is a box) and by hit-and-run
    otherwise. ``vertex`` holds constant boundary vectors. ``replay`` plays
    fixed sequences starting at step ``start`` and is zero elsewhere.
    """

    kind: str
    W: HPolytope
    V: HPolytope
    seed: int = 0
    w_center: np.ndarray | None = None
    w_half: np.ndarray | None = None
    v_center: np.ndarray | None = None
    v_half: np.ndarray | None = None
    w_const: np.ndarray | None = None
    v_const: np.ndarray | None = None
    w_seq: np.ndarray | None = None
    v_seq: np.ndarray | None = None
    start: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "uniform", "vertex", "replay"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "vertex":
            for name, vec, P in (("w", self.w_const, self.W), ("v", self.v_const, self.V)):
                if vec is None:
                    raise ValueError(f"vertex disturbance needs a constant {name}")
                if not pt.contains(P, vec, tol=1e-9):
                    raise ValueError(f"constant {name} is outside its set")
                if np.max(P.A @ vec - P.b) < -1e-9:
                    raise ValueError(f"constant {name} is not on the boundary of its set")
        if self.kind == "replay":
            if self.w_seq is None or self.v_seq is None:
                raise ValueError("replay disturbance needs w and v sequences")
            self.w_seq = np.atleast_2d(np.asarray(self.w_seq, dtype=float))
            self.v_seq = np.atleast_2d(np.asarray(self.v_seq, dtype=float))
        self.reset()

    def reset(self) -> None:
        """Restart the random streams so that a model can be reused deterministically."""
        self._k = 0
        if self.kind != "uniform":
            return
        w_rng, v_rng = (np.random.Generator(np.random.PCG64(s))
                        for s in np.random.SeedSequence(self.seed).spawn(2))
        self._w = self._sampler(self.W, w_rng, self.w_center, self.w_half)
        self._v = self._sampler(self.V, v_rng, self.v_center, self.v_half)

    @staticmethod
    def _sampler(P: HPolytope, rng, center, half):
        if center is None or half is None:
            box = _box_or_none(P)
            if box is not None:
                center, half = (box[0] + box[1]) / 2, (box[1] - box[0]) / 2
        if center is not None and half is not None:
            center = np.asarray(center, dtype=float)
            half = np.asarray(half, dtype=float)
            return lambda: center + rng.uniform(-1.0, 1.0, center.size) * half
        return _HitAndRun(P, rng).draw

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        k = self._k
        self._k += 1
        if self.kind == "zero":
            return np.zeros(self.W.dim), np.zeros(self.V.dim)
        if self.kind == "uniform":
            return self._w(), self._v()
        if self.kind == "vertex":
            return np.array(self.w_const, dtype=float), np.array(self.v_const, dtype=float)
        j = k - self.start
        if 0 <= j < len(self.w_seq):
            return self.w_seq[j].copy(), self.v_seq[j].copy()
        return np.zeros(self.W.dim), np.zeros(self.V.dim)

    def describe(self) -> dict:
        return {"kind": self.kind, "seed": int(self.seed), "start": int(self.start)}


def uniform_model(model, seed: int) -> DisturbanceModel:
    """Uniform noise for an example problem, centred on its constant load."""
    return DisturbanceModel("uniform", model.W, model.V, seed=seed,
                            w_center=model.w_offset, w_half=model.w_noise,
                            v_center=np.zeros(model.plant.p), v_half=model.v_noise)


def vertex_model(model) -> DisturbanceModel:
    """The constant ``(+, +, ..)`` corner of the sampling boxes, which lies on the set boundaries."""
    w = np.asarray(model.w_offset, dtype=float) + np.abs(model.w_noise)
    v = np.abs(np.asarray(model.v_noise, dtype=float))
    return DisturbanceModel("vertex", model.W, model.V, w_const=w, v_const=v)


# ----------------------------------------------------------------------------
# traces

_SERIES = ("xf", "y", "z", "zr", "u", "x_hat", "x_bar", "u_bar", "V", "d", "e", "w", "v")


@dataclass
class Trace:
    """Per-step log of one closed-loop run.

    Row ``k`` holds the states at the start of step ``k`` and the signals
    applied during it.
    """

    k: np.ndarray
    xf: np.ndarray
    y: np.ndarray
    z: np.ndarray
    zr: np.ndarray
    u: np.ndarray
    x_hat: np.ndarray
    x_bar: np.ndarray
    u_bar: np.ndarray
    V: np.ndarray
    qp_status: list[str]
    d: np.ndarray
    e: np.ndarray
    w: np.ndarray
    v: np.ndarray
    metadata: dict = field(default_factory=dict)
    failure: dict | None = None

    def __len__(self) -> int:
        return len(self.k)

    @classmethod
    def empty(cls, nf, n, m, p, o, t, metadata=None) -> "Trace":
        z = np.zeros
        return cls(z(0, dtype=int), z((0, nf)), z((0, p)), z((0, o)), z((0, t)), z((0, m)),
                   z((0, n)), z((0, n)), z((0, m)), z(0), [], z((0, n)), z((0, o)), z((0, nf)),
                   z((0, p)), metadata or {})

    def header(self) -> list[str]:
        cols = ["k"]
        for name in _SERIES:
            arr = getattr(self, name)
            if arr.ndim == 1:
                cols.append(name)
            else:
                cols += [f"{name}[{i}]" for i in range(arr.shape[1])]
        cols.append("qp_status")
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        for key in ("config_hash", "scenario", "seed"):
            if key in self.metadata:
                buf.write(f"# {key}={self.metadata[key]}\n")
        wr.writerow(self.header())
        for i in range(len(self)):
            row = [int(self.k[i])]
            for name in _SERIES:
                vals = np.atleast_1d(getattr(self, name)[i])
                row += [repr(float(x)) for x in vals]
            row.append(self.qp_status[i])
            wr.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {name: getattr(self, name).tolist() for name in _SERIES}
        d["k"] = self.k.tolist()
        d["qp_status"] = list(self.qp_status)
        d["metadata"] = self.metadata
        d["failure"] = self.failure
        # column widths survive even when the trace has no rows
        d["widths"] = {name: int(getattr(self, name).shape[1]) for name in _SERIES if name != "V"}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Trace":
        n = len(d["k"])
        widths = d.get("widths", {})

        def arr(name):
            a = np.asarray(d[name], dtype=float)
            return a if name == "V" else a.reshape(n, widths.get(name, -1))

        return cls(np.asarray(d["k"], dtype=int), *(arr(s) for s in _SERIES[:8]), arr("V"),
                   list(d["qp_status"]), arr("d"), arr("e"), arr("w"), arr("v"),
                   d.get("metadata", {}), d.get("failure"))

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        p_csv, p_json = stem.with_suffix(".csv"), stem.with_suffix(".json")
        p_csv.write_text(self.to_csv())
        p_json.write_text(self.to_json())
        return p_csv, p_json


# ----------------------------------------------------------------------------
# closed loop


def run_controller(plant: StateSpace, prob: ROMPCProblem, gains: Gains, T: np.ndarray,
                   dist: DisturbanceModel, steps: int, x0=None, x_hat0=None, x_bar0=None,
                   metadata: dict | None = None, debug: bool = False) -> Trace:
    """Simulate the plant under the reduced-order MPC for ``steps`` steps.

    An infeasible QP ends the run; the trace is truncated at that step and
    ``failure`` records why.
    """
    rom = prob.rom
    nf, n, m, p, o = plant.n, rom.n, plant.m, plant.p, plant.o
    t = T.shape[0]
    x = np.zeros(nf) if x0 is None else np.asarray(x0, dtype=float).copy()
    ctrl = ControllerState.initial(n, x_hat0, x_bar0)
    rec = {name: [] for name in _SERIES}
    status, ks, failure = [], [], None
    for k in range(int(steps)):
        w, v = dist.sample()
        y = plant.C @ x + v
        try:
            u, nxt, info = control_step(prob, gains, ctrl, y, debug=debug)
        except RompcInfeasible as exc:
            failure = {"k": k, "reason": str(exc)}
            break
        z = plant.H @ x
        for name, val in (("xf", x), ("y", y), ("z", z), ("zr", T @ z), ("u", u),
                          ("x_hat", ctrl.x_hat), ("x_bar", ctrl.x_bar), ("u_bar", info.u_bar),
                          ("V", info.value), ("d", ctrl.x_hat - ctrl.x_bar),
                          ("e", z - rom.H @ ctrl.x_bar), ("w", w), ("v", v)):
            rec[name].append(val)
        status.append(info.status)
        ks.append(k)
        x = plant.A @ x + plant.B @ u + w
        ctrl = nxt
    tr = Trace.empty(nf, n, m, p, o, t, dict(metadata or {}))
    if ks:
        arrays = {name: np.array(vals, dtype=float) for name, vals in rec.items()}
        tr = Trace(np.array(ks), *(arrays[s] for s in _SERIES[:8]), arrays["V"], status,
                   arrays["d"], arrays["e"], arrays["w"], arrays["v"], dict(metadata or {}))
    tr.failure = failure
    # the state after the last step is kept so replays can be checked end to end
    tr.metadata.setdefault("final_xf", x.tolist())
    return tr


def run_closed_loop(plant: StateSpace, artifact, dist: DisturbanceModel, x0=None, r=None,
                    steps: int = 500, naive: bool = False, debug: bool = False,
                    scenario: str = "", seed: int | None = None) -> Trace:
    """Closed loop with an artifact's controller at setpoint ``r``.

    The controller starts from ``x_hat = x_bar = W x0`` (the reduced
    coordinates of a known initial plant state), which is zero for ``x0 = 0``.
    """
    idx = 0 if r is None else artifact.setpoint_index(r)
    prob = artifact.problem(idx, naive=naive)
    x0 = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float)
    if not pt.contains(artifact.model.Z, plant.H @ x0, tol=1e-9):
        raise ValueError("initial plant state violates the performance constraints")
    xr0 = artifact.reduction.W @ x0
    meta = {"config_hash": artifact.config_hash, "scenario": scenario,
            "seed": dist.seed if seed is None else seed, "disturbance": dist.describe(),
            "controller": "naive" if naive else "rompc", "r": prob.targets.r.tolist()}
    return run_controller(plant, prob, artifact.gains, artifact.model.T.T, dist, steps,
                          x0, xr0, xr0, meta, debug)


# ----------------------------------------------------------------------------
# checkers


@dataclass
class ViolationReport:
    z_violations: int
    u_violations: int
    first_violation: int | None
    worst_margin: float

    @property
    def ok(self) -> bool:
        return self.z_violations == 0 and self.u_violations == 0


def _margins(P: HPolytope, X: np.ndarray) -> np.ndarray:
    if len(X) == 0:
        return np.zeros(0)
    return np.min(P.b[None, :] - X @ P.A.T, axis=1)


def check_constraints(trace: Trace, Z: HPolytope, U: HPolytope, tol: float = 1e-6) -> ViolationReport:
    mz, mu = _margins(Z, trace.z), _margins(U, trace.u)
    bad_z, bad_u = mz < -tol, mu < -tol
    bad = np.flatnonzero(bad_z | bad_u)
    worst = float(min(mz.min(initial=np.inf), mu.min(initial=np.inf)))
    return ViolationReport(int(bad_z.sum()), int(bad_u.sum()),
                           int(trace.k[bad[0]]) if bad.size else None, worst)


def membership_violations(X: np.ndarray, P: HPolytope, tol: float = 1e-6) -> int:
    return int(np.sum(_margins(P, X) < -tol))


@dataclass
class Entry:
    k_enter: int | None
    stayed: bool


def convergence_entry(trace: Trace, r, R: HPolytope, tau_ss: int = 0, tol: float = 1e-9) -> Entry:
    """First index from which ``z^r - r`` stays in ``R`` until the end of the trace."""
    del tau_ss
    err = trace.zr - np.asarray(r, dtype=float).reshape(1, -1)
    inside = _margins(R, err) >= -tol
    if inside.size == 0 or not inside[-1]:
        return Entry(None, False)
    outside = np.flatnonzero(~inside)
    k = 0 if outside.size == 0 else int(outside[-1]) + 1
    return Entry(int(trace.k[k]), True)


def detect_rompc_convergence(trace: Trace, targets: TargetChain, eps_x: float, eps_u: float) -> int | None:
    """First step after which ``|x_bar - x_bar_inf|`` and ``|u_bar - u_bar_inf|`` stay within eps."""
    ok = (np.abs(trace.x_bar - targets.x_bar_inf).max(axis=1, initial=0) <= eps_x) & \
         (np.abs(trace.u_bar - targets.u_bar_inf).max(axis=1, initial=0) <= eps_u)
    if ok.size == 0 or not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return int(trace.k[0 if bad.size == 0 else bad[-1] + 1])


def fit_decay_rate(errors: np.ndarray, floor: float = 1e-12) -> float:
    """Least-squares rate ``rho`` of ``|err_k| ~ C rho^k`` over the samples above ``floor``."""
    errors = np.asarray(errors, dtype=float)
    keep = errors > floor
    if keep.sum() < 2:
        return 0.0
    ks = np.flatnonzero(keep)
    slope = np.polyfit(ks, np.log(errors[keep]), 1)[0]
    return float(np.exp(slope))


# ----------------------------------------------------------------------------
# witness replay


def replay_error_witness(plant: StateSpace, rom: StateSpace, gains: Gains, scen: dict) -> float:
    """Propagate a D/E face witness through the closed-loop error recursion.

    The witness fixes the inputs ``u``, disturbances ``w, v`` and initial
    states; the returned number is the face objective at the end of the
    window, to be compared with the stored ``gamma``.
    """
    tau = int(scen["tau"])
    x = np.asarray(scen["xf0"], dtype=float)
    xh = np.asarray(scen["xhat0"], dtype=float)
    xb = np.asarray(scen["xbar0"], dtype=float)
    U_, W_, V_ = (np.asarray(scen[k], dtype=float).reshape(tau, -1) for k in ("u", "w", "v"))
    K, L = gains.K, gains.L
    for i in range(tau):
        u = U_[i]
        y = plant.C @ x + V_[i]
        u_bar = u - K @ (xh - xb)
        x, xh, xb = (plant.A @ x + plant.B @ u + W_[i],
                     rom.A @ xh + rom.B @ u + L @ (y - rom.C @ xh),
                     rom.A @ xb + rom.B @ u_bar)
    th = np.asarray(scen["direction"], dtype=float)
    kind = scen["kind"]
    if kind == "D":
        return float(th @ (xh - xb))
    if kind == "E":
        return float(th @ (plant.H @ x - rom.H @ xb))
    if kind in ("E_hat", "E_combined"):
        return float(th @ (plant.H @ x - rom.H @ xh))
    raise ValueError(f"not an error-bound witness: {kind!r}")


def replay_tracking_witness(plant: StateSpace, rom: StateSpace, gains: Gains, T: np.ndarray,
                            scen: dict) -> float:
    """Replay an R face witness with its own nominal sequences ``x_bar, u_bar``."""
    tau = int(scen["tau"])
    x = np.asarray(scen["xf0"], dtype=float)
    xh = np.asarray(scen["xhat0"], dtype=float)
    XB = np.asarray(scen["xbar"], dtype=float).reshape(tau + 1, -1)
    UB, W_, V_ = (np.asarray(scen[k], dtype=float).reshape(tau, -1) for k in ("ubar", "w", "v"))
    for i in range(tau):
        u = UB[i] + gains.K @ (xh - XB[i])
        y = plant.C @ x + V_[i]
        x, xh = (plant.A @ x + plant.B @ u + W_[i],
                 rom.A @ xh + rom.B @ u + gains.L @ (y - rom.C @ xh))
    th = np.asarray(scen["direction"], dtype=float)
    r = np.asarray(scen["r"], dtype=float).reshape(-1)
    return float(th @ (T @ plant.H @ x - r))


def witness_disturbance(artifact, scen: dict, start: int) -> DisturbanceModel:
    """Replay disturbance injecting a witness's ``w, v`` from step ``start``."""
    tau = int(scen["tau"])
    m = artifact.model
    return DisturbanceModel("replay", m.W, m.V, w_seq=np.asarray(scen["w"]).reshape(tau, -1),
                            v_seq=np.asarray(scen["v"]).reshape(tau, -1), start=start)


def settle_steps(artifact, index: int = 0, max_steps: int = 2000) -> int:
    """Steps a disturbance-free run needs before the nominal MPC meets the eps criteria."""
    eps_x = float(artifact.R.extra.get("eps_x", 1e-6))
    eps_u = float(artifact.R.extra.get("eps_u", 1e-6))
    m = artifact.model
    zero = DisturbanceModel("zero", m.W, m.V)
    r = artifact.setpoints[index].r
    tr = run_closed_loop(m.plant, artifact, zero, r=r, steps=max_steps)
    k = detect_rompc_convergence(tr, artifact.setpoints[index].targets, eps_x, eps_u)
    if k is None:
        raise RuntimeError("nominal MPC did not meet the eps criteria in a disturbance-free run")
    return k
