"""The offline artifact and the synthesis pipeline that produces it.

An artifact bundles every quantity computed offline: the reduced model, the
gains, the error bounds with their witnesses, the tightened sets and, per
setpoint, the target chain and the terminal set. It serializes to JSON with
full float precision so that loading and re-serializing is byte-identical.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as bd
from . import reduction as rd
from . import synthesis as sy
from .config import build_model, canonical_json, config_hash, weight_matrix
from .controller import ROMPCProblem
from .models import ExampleProblem
from .polytope import DirectionSet, HPolytope
from .synthesis import CostWeights, Gains, TargetChain

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A synthesis stage failed; ``stage`` names it and ``diagnosis`` carries the verdict if any."""

    def __init__(self, stage: str, cause: str, diagnosis: str | None = None):
        msg = f"[{stage}] {cause}"
        if diagnosis:
            msg += f" -- zero-disturbance diagnostic: {DIAGNOSIS_ADVICE[diagnosis]}"
        super().__init__(msg)
        self.stage = stage
        self.cause = cause
        self.diagnosis = diagnosis


DIAGNOSIS_ADVICE = {
    "disturbances": "succeeds without disturbances, reduce the disturbances",
    "reduced_model": "fails even without disturbances, redesign the reduced order model",
}


@dataclass
class SetpointEntry:
    r: np.ndarray
    targets: TargetChain
    Delta: HPolytope
    terminal_margins: dict
    naive_x_bar_inf: np.ndarray
    naive_u_bar_inf: np.ndarray
    naive_Delta: HPolytope | None

    def to_dict(self) -> dict:
        return {
            "r": self.r.tolist(),
            "targets": self.targets.to_dict(),
            "Delta": self.Delta.to_dict(),
            "terminal_margins": self.terminal_margins,
            "naive": {
                "x_bar_inf": self.naive_x_bar_inf.tolist(),
                "u_bar_inf": self.naive_u_bar_inf.tolist(),
                "Delta": None if self.naive_Delta is None else self.naive_Delta.to_dict(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SetpointEntry":
        nv = d["naive"]
        return cls(
            np.asarray(d["r"], dtype=float), TargetChain.from_dict(d["targets"]),
            HPolytope.from_dict(d["Delta"]), dict(d["terminal_margins"]),
            np.asarray(nv["x_bar_inf"], dtype=float), np.asarray(nv["u_bar_inf"], dtype=float),
            None if nv["Delta"] is None else HPolytope.from_dict(nv["Delta"]),
        )


@dataclass
class OfflineArtifact:
    config: dict
    config_hash: str
    model: ExampleProblem
    reduction: rd.ReductionResult
    weights: CostWeights
    gains: Gains
    P: np.ndarray
    certificates: dict
    D0: HPolytope
    D: bd.BoundResult
    E: bd.BoundResult
    E_combined: bd.BoundResult
    Zbar: HPolytope
    Ubar: HPolytope
    R: bd.BoundResult
    setpoints: list[SetpointEntry]
    escalation: list
    version: str = __version__
    timings: dict = field(default_factory=dict)

    @property
    def plant(self):
        return self.model.plant

    @property
    def rom(self):
        return self.reduction.rom

    @property
    def sets(self) -> bd.ConstraintSets:
        return bd.ConstraintSets(self.model.Z, self.model.U, self.model.W, self.model.V)

    @property
    def tau(self) -> int:
        return self.D.tau

    def setpoint_index(self, r) -> int:
        r = np.asarray(r, dtype=float).reshape(-1)
        for i, sp in enumerate(self.setpoints):
            if sp.r.shape == r.shape and np.allclose(sp.r, r, atol=1e-12):
                return i
        raise KeyError(f"setpoint {r.tolist()} was not synthesized")

    def problem(self, index: int = 0, naive: bool = False) -> ROMPCProblem:
        sp = self.setpoints[index]
        if not naive:
            return ROMPCProblem(self.rom, self.weights, self.P, self.Zbar, self.Ubar, sp.Delta,
                                sp.targets, self.gains.K_f)
        if sp.naive_Delta is None:
            raise ValueError("the naive targets admit no terminal set for this setpoint")
        t = sp.targets
        chain = TargetChain(t.x_f_inf, t.u_inf, t.x_hat_inf, sp.naive_x_bar_inf,
                            sp.naive_u_bar_inf, t.r)
        return ROMPCProblem(self.rom, self.weights, self.P, self.Zbar, self.Ubar, sp.naive_Delta,
                            chain, self.gains.K_f)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        w = self.weights
        return {
            "format": "rompc-offline-artifact",
            "version": self.version,
            "config_hash": self.config_hash,
            "config": self.config,
            "model": self.model.to_dict(),
            "reduction": self.reduction.to_dict(),
            "weights": {"Q": w.Q.tolist(), "R": w.R.tolist(), "N": w.N},
            "gains": self.gains.to_dict(),
            "P": self.P.tolist(),
            "certificates": self.certificates,
            "D0": self.D0.to_dict(),
            "D": self.D.to_dict(),
            "E": self.E.to_dict(),
            "E_combined": self.E_combined.to_dict(),
            "Zbar": self.Zbar.to_dict(),
            "Ubar": self.Ubar.to_dict(),
            "R": self.R.to_dict(),
            "setpoints": [s.to_dict() for s in self.setpoints],
            "escalation": [list(a) for a in self.escalation],
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OfflineArtifact":
        if d.get("format") != "rompc-offline-artifact":
            raise ValueError("not an offline artifact file")
        w = d["weights"]
        return cls(
            config=d["config"], config_hash=d["config_hash"],
            model=ExampleProblem.from_dict(d["model"]),
            reduction=rd.ReductionResult.from_dict(d["reduction"]),
            weights=CostWeights(np.asarray(w["Q"], dtype=float), np.asarray(w["R"], dtype=float), w["N"]),
            gains=Gains.from_dict(d["gains"]), P=np.asarray(d["P"], dtype=float),
            certificates=d["certificates"], D0=HPolytope.from_dict(d["D0"]),
            D=bd.BoundResult.from_dict(d["D"]), E=bd.BoundResult.from_dict(d["E"]),
            E_combined=bd.BoundResult.from_dict(d["E_combined"]),
            Zbar=HPolytope.from_dict(d["Zbar"]), Ubar=HPolytope.from_dict(d["Ubar"]),
            R=bd.BoundResult.from_dict(d["R"]),
            setpoints=[SetpointEntry.from_dict(s) for s in d["setpoints"]],
            escalation=[tuple(a) for a in d["escalation"]],
            version=d["version"], timings=d.get("timings", {}),
        )

    def to_json(self, include_timings: bool = False) -> str:
        d = self.to_dict()
        if not include_timings:
            d.pop("timings")
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_json())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "OfflineArtifact":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _directions(spec, dim: int) -> DirectionSet | None:
    if spec is None:
        return None
    return DirectionSet(np.asarray(spec, dtype=float).reshape(-1, dim))


def synthesize(cfg: dict) -> OfflineArtifact:
    """Run the whole offline pipeline for a validated, self-contained config.

    Every failure is raised as :class:`PipelineError` naming the stage.
    """
    timings = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    try:
        model = build_model(cfg["model"])
    except (ValueError, AssertionError) as exc:
        raise PipelineError("model", str(exc)) from exc
    plant = model.plant
    red_cfg = cfg["reduction"]
    try:
        red = rd.balanced_truncation(plant, int(red_cfg["n"]),
                                     tol=float(red_cfg.get("marginal_tol", rd.MARGINAL_TOL)))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineError("reduction", str(exc)) from exc
    rom = red.rom
    lap("reduction")

    wc = cfg["weights"]
    try:
        weights = CostWeights(weight_matrix(wc["Q"], rom.n, rom, "Q"),
                              weight_matrix(wc["R"], rom.m, rom, "R"), wc["N"])
        Qe = weight_matrix(wc.get("Qe"), rom.n, rom, "Qe")
        Re = weight_matrix(wc.get("Re"), rom.p, rom, "Re")
        gains, P = sy.design_gains(rom, weights, Qe=Qe, Re=Re)
        radii = gains.check(rom)
    except ValueError as exc:
        raise PipelineError("gains", str(exc)) from exc
    cert = sy.closed_loop_certificate(plant, rom, gains)
    if not cert.schur:
        raise PipelineError("certificate", f"closed-loop matrix S_ss is not Schur (margin {cert.margin:.3e})")
    F = sy.chain_matrix(plant, rom, gains, model.T.T)
    certificates = {
        "S_ss_margin": cert.margin,
        "F_rank": int(np.linalg.matrix_rank(F)),
        "F_size": int(F.shape[0]),
        "dare_residual": sy.dare_residual(rom.A, rom.B, weights.Q, weights.R, P),
        "stage_equality_residual": sy.stage_equality_residual(rom, weights.Q, weights.R, P, gains.K_f),
        "spectral_radii": radii,
    }
    lap("gains")

    bc = cfg["bounds"]
    sets = bd.ConstraintSets(model.Z, model.U, model.W, model.V)
    dirs = bc.get("directions", {})
    dir_D = _directions(dirs.get("D"), rom.n)
    dir_E = _directions(dirs.get("E"), plant.o)
    dir_R = _directions(dirs.get("R"), model.T.t)
    tau0 = int(bc["tau"])
    esc = bd.escalate_tau(plant, rom, gains, sets, tau0, int(bc.get("tau_max", tau0)),
                          keep_tightening=bool(bc.get("keep_tightening", False)),
                          directions_D=dir_D, directions_E=dir_E)
    if esc.result is None:
        tried = ", ".join(f"tau={t}: {why}" for t, why in esc.attempts)
        raise PipelineError("bounds", f"no admissible D, E found ({tried})", esc.diagnosis)
    res = esc.result
    spec = bd.BoundSpec(tau=res.tau, D0=res.D0, directions_E=dir_E, directions_R=dir_R,
                        tau_ss=int(bc.get("tau_ss", 50)), eps_x=float(bc.get("eps_x", 1e-6)),
                        eps_u=float(bc.get("eps_u", 1e-6)))
    try:
        E_comb = bd.compute_E_combined_baseline(plant, rom, gains, sets, spec, res.D)
    except bd.BoundsFailure as exc:
        raise PipelineError("bounds", f"combined baseline: {exc}") from exc
    lap("bounds")

    entries = []
    for r in cfg["setpoints"]:
        r = np.asarray(r, dtype=float)
        try:
            chain = sy.rom_targets(rom, gains, plant, model.T, r, res.Zbar, res.Ubar, model.Z, model.U)
        except ValueError as exc:
            raise PipelineError("targets", f"setpoint {r.tolist()}: {exc}") from exc
        try:
            Delta = sy.terminal_set(rom, gains.K_f, res.Zbar, res.Ubar, chain.x_bar_inf, chain.u_bar_inf)
        except ValueError as exc:
            raise PipelineError("terminal_set", f"setpoint {r.tolist()}: {exc}") from exc
        rep = sy.verify_terminal_set(Delta, rom, gains.K_f, res.Zbar, res.Ubar,
                                     chain.x_bar_inf, chain.u_bar_inf)
        if not rep.ok:
            raise PipelineError("terminal_set", f"setpoint {r.tolist()}: verification failed {rep}")
        xn, un = sy.naive_targets(rom, model.T.T @ rom.H, r)
        try:
            Dn = sy.terminal_set(rom, gains.K_f, res.Zbar, res.Ubar, xn, un)
        except ValueError as exc:
            log.warning("naive targets for %s admit no terminal set: %s", r.tolist(), exc)
            Dn = None
        margins = {"invariance": rep.invariance_margin, "state": rep.state_margin,
                   "input": rep.input_margin}
        entries.append(SetpointEntry(r, chain, Delta, margins, xn, un, Dn))
    lap("targets")

    try:
        R = bd.compute_R(plant, rom, gains, sets, model.T, spec, res.Zbar, res.Ubar, res.D.poly)
    except bd.BoundsFailure as exc:
        raise PipelineError("tracking_bound", str(exc)) from exc
    lap("tracking_bound")

    return OfflineArtifact(
        config=cfg, config_hash=config_hash(cfg), model=model, reduction=red, weights=weights,
        gains=gains, P=P, certificates=certificates, D0=res.D0, D=res.D, E=res.E,
        E_combined=E_comb, Zbar=res.Zbar, Ubar=res.Ubar, R=R, setpoints=entries,
        escalation=[tuple(a) for a in esc.attempts], timings=timings,
    )


def artifact_digest(art: OfflineArtifact) -> str:
    import hashlib
    return hashlib.sha256(art.to_json().encode()).hexdigest()[:16]


__all__ = ["OfflineArtifact", "PipelineError", "SetpointEntry", "synthesize", "artifact_digest",
           "canonical_json"]
