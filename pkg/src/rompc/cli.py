"""Command-line front end.

Subcommands: ``synthesize`` builds an offline artifact from a config,
``simulate`` runs the configured scenarios, ``verify`` re-checks an artifact
and ``plot-data`` exports plot-ready CSV files.

Exit codes: 0 success, 2 usage or config error, 3 synthesis failure,
4 simulation infeasibility, 5 verification failure, 6 unreadable or
mismatched input files.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as bd
from . import polytope as pt
from . import sim
from . import synthesis as sy
from .artifact import OfflineArtifact, PipelineError, synthesize
from .config import ConfigError, Scenario, load_config, resolve_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SYNTHESIS = 3
EXIT_INFEASIBLE = 4
EXIT_VERIFY = 5
EXIT_INPUT = 6

OUT_ENV = "ROMPC_OUT_DIR"
DEFAULT_OUT = "rompc-out"

log = logging.getLogger("rompc")


class InputError(RuntimeError):
    pass


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _load_artifact(path: str | None) -> OfflineArtifact:
    if not path:
        raise InputError("--artifact is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"artifact {path!r} not found")
    try:
        return OfflineArtifact.load(p)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"artifact {path!r} could not be read: {exc}") from exc


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


# ----------------------------------------------------------------------------
# synthesize


def cmd_synthesize(args) -> int:
    cfg, base = load_config(args.config)
    cfg = resolve_config(cfg, base)
    out = _out_dir(args.out or cfg.get("output_dir"))
    t0 = time.perf_counter()
    try:
        art = synthesize(cfg)
    except PipelineError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        if exc.diagnosis:
            print(f"diagnosis: {exc.diagnosis}", file=sys.stderr)
        return EXIT_SYNTHESIS
    path = art.save(out / "artifact.json")
    for res in (art.D, art.E, art.R):
        for face in range(len(res.gammas)):
            scen = bd.extract_witness(res, face)
            scen["config_hash"] = art.config_hash
            _write_json(out / "witnesses" / f"{res.kind}_{face}.json", scen)
    print(f"artifact written to {path} (config hash {art.config_hash}, "
          f"{time.perf_counter() - t0:.1f} s)")
    print(f"  tau={art.tau}  attempts={art.escalation}")
    print(f"  Zbar b={np.round(art.Zbar.b, 4).tolist()}  Ubar b={np.round(art.Ubar.b, 4).tolist()}")
    print(f"  R gammas={np.round(art.R.gammas, 6).tolist()}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# simulate


def _scenario_disturbance(art: OfflineArtifact, sc: Scenario, seed: int):
    m = art.model
    if sc.disturbance == "zero":
        return sim.DisturbanceModel("zero", m.W, m.V), sc.steps
    if sc.disturbance == "uniform":
        return sim.uniform_model(m, seed), sc.steps
    if sc.disturbance == "vertex":
        return sim.vertex_model(m), sc.steps
    scen = bd.extract_witness(art.R, sc.face)
    return _witness_model(art, scen, sc.setpoint, sc.steps)


def _witness_model(art, scen, setpoint, steps):
    start = sim.settle_steps(art, setpoint)
    return sim.witness_disturbance(art, scen, start), max(steps, start + int(scen["tau"]) + 1)


def _summary_row(art, sc_name, tr, r) -> dict:
    m = art.model
    rep = sim.check_constraints(tr, m.Z, m.U)
    ent = sim.convergence_entry(tr, r, art.R.poly)
    final = float(np.abs(tr.zr[-1] - r).max()) if len(tr) else float("nan")
    return {
        "scenario": sc_name, "steps": len(tr), "infeasible": tr.failure is not None,
        "z_violations": rep.z_violations, "u_violations": rep.u_violations,
        "D_violations": sim.membership_violations(tr.d, art.D.poly),
        "E_violations": sim.membership_violations(tr.e, art.E.poly),
        "k_enter": ent.k_enter, "final_tracking_error": final,
    }


def cmd_simulate(args) -> int:
    art = _load_artifact(args.artifact)
    out = _out_dir(args.out) / "traces"
    scenarios = [Scenario.from_dict(s) for s in art.config.get("scenarios", [])]
    if args.replay:
        scen = json.loads(Path(args.replay).read_text())
        if scen.get("config_hash") not in (None, art.config_hash):
            raise InputError("witness file was produced for a different artifact")
        scenarios = [Scenario("replay", "witness", steps=0)]
    elif args.scenario:
        scenarios = [s for s in scenarios if s.name in args.scenario]
        missing = set(args.scenario) - {s.name for s in scenarios}
        if missing:
            raise InputError(f"unknown scenarios {sorted(missing)}")
    rows, code = [], EXIT_OK
    for sc in scenarios:
        seed = sc.seed if args.seed_override is None else args.seed_override
        if args.replay:
            dist, steps = _witness_model(art, scen, 0, 0)
        else:
            dist, steps = _scenario_disturbance(art, sc, seed)
        sp = art.setpoints[sc.setpoint]
        tr = sim.run_closed_loop(art.plant, art, dist, x0=sc.x0, r=sp.r, steps=steps,
                                 naive=sc.controller == "naive", scenario=sc.name, seed=seed)
        tr.save(out / sc.name)
        row = _summary_row(art, sc.name, tr, sp.r)
        rows.append(row)
        if tr.failure is not None:
            code = EXIT_INFEASIBLE
    summary = {"config_hash": art.config_hash, "scenarios": rows}
    _write_json(out / "summary.json", summary)
    if rows:
        with open(out / "summary.csv", "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(rows)
    hdr = f"{'scenario':<12} {'steps':>6} {'viol Z/U':>9} {'k_enter':>8} {'final err':>11}"
    print(hdr)
    for r in rows:
        print(f"{r['scenario']:<12} {r['steps']:>6} {r['z_violations']:>4}/{r['u_violations']:<4} "
              f"{str(r['k_enter']):>8} {r['final_tracking_error']:>11.3e}")
    return code


# ----------------------------------------------------------------------------
# verify


def verify_artifact(art: OfflineArtifact, level: str = "quick", runs: int = 100,
                    steps: int = 500) -> list[tuple[str, bool, str]]:
    """Run the consistency checks; each entry is ``(name, passed, detail)``."""
    checks = []

    def add(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    plant, rom, g, m = art.plant, art.rom, art.gains, art.model
    w = art.weights
    scale = max(1.0, np.abs(art.P).max())
    dare = sy.dare_residual(rom.A, rom.B, w.Q, w.R, art.P) / scale
    add("dare_residual", dare <= 1e-7, f"{dare:.2e}")
    stage = sy.stage_equality_residual(rom, w.Q, w.R, art.P, g.K_f) / scale
    add("stage_equality_residual", stage <= 1e-7, f"{stage:.2e}")
    cert = sy.closed_loop_certificate(plant, rom, g)
    add("S_ss_schur", cert.schur, f"margin {cert.margin:.4f}")
    for i, sp in enumerate(art.setpoints):
        rep = sy.verify_terminal_set(sp.Delta, rom, g.K_f, art.Zbar, art.Ubar,
                                     sp.targets.x_bar_inf, sp.targets.u_bar_inf)
        add(f"terminal_set[{i}]", rep.ok,
            f"margins {rep.invariance_margin:.2e}/{rep.state_margin:.2e}/{rep.input_margin:.2e}")
        res = sy.chain_residuals(plant, rom, g, m.T, sp.targets)
        add(f"target_chain[{i}]", max(res.values()) <= 1e-8, str(res))
    add("D_in_D0", pt.contained_in(art.D.poly, art.D0))
    for res in (art.D, art.E):
        errs = [abs(sim.replay_error_witness(plant, rom, g, bd.extract_witness(res, l)) - res.gammas[l])
                for l in range(len(res.gammas))]
        add(f"witness_replay_{res.kind}", max(errs) <= 1e-5, f"max err {max(errs):.2e}")
    errs = [abs(sim.replay_tracking_witness(plant, rom, g, m.T.T, bd.extract_witness(art.R, l))
                - art.R.gammas[l]) for l in range(len(art.R.gammas))]
    add("witness_replay_R", max(errs) <= 1e-5, f"max err {max(errs):.2e}")
    same = art.E.directions.shape == art.E_combined.directions.shape and \
        np.allclose(art.E.directions, art.E_combined.directions)
    gap = art.E_combined.gammas - art.E.gammas if same else np.array([-np.inf])
    add("E_dominance", same and gap.min() >= -2e-7, f"min gap {gap.min():.2e}, max gap {gap.max():.2e}")
    if level == "full":
        worst = {"z": 0, "u": 0, "d": 0, "e": 0, "infeasible": 0}
        for seed in range(runs):
            tr = sim.run_closed_loop(plant, art, sim.uniform_model(m, seed), steps=steps)
            rep = sim.check_constraints(tr, m.Z, m.U)
            worst["z"] += rep.z_violations
            worst["u"] += rep.u_violations
            worst["d"] += sim.membership_violations(tr.d, art.D.poly)
            worst["e"] += sim.membership_violations(tr.e, art.E.poly)
            worst["infeasible"] += tr.failure is not None
        add(f"robustness_sample[{runs}x{steps}]", not any(worst.values()), str(worst))
    return checks


def cmd_verify(args) -> int:
    art = _load_artifact(args.artifact)
    checks = verify_artifact(art, args.level, runs=args.runs)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    passed = all(ok for _, ok, _ in checks)
    if args.out:
        _write_json(_out_dir(args.out) / "verify.json", {
            "config_hash": art.config_hash, "level": args.level, "passed": passed,
            "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in checks]})
    return EXIT_OK if passed else EXIT_VERIFY


# ----------------------------------------------------------------------------
# plot data


def polytope_outline(P: pt.HPolytope, count: int = 180) -> np.ndarray:
    """Ordered boundary points of a bounded 2-D polytope from support maximizers."""
    if P.dim != 2:
        raise ValueError("outlines are only defined for 2-D polytopes")
    pts = []
    for a in np.linspace(0.0, 2 * np.pi, count, endpoint=False):
        s = pt.support(P, np.array([np.cos(a), np.sin(a)]))
        if s.maximizer is None or not np.isfinite(s.value):
            raise ValueError("polytope is unbounded")
        pts.append(s.maximizer)
    pts = np.array(pts)
    keep = [0] + [i for i in range(1, len(pts)) if np.abs(pts[i] - pts[i - 1]).max() > 1e-9]
    return pts[keep]


def _write_outline(path: Path, pts: np.ndarray, art_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={art_hash}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x0", "x1"])
        for p in np.vstack([pts, pts[:1]]):
            wr.writerow([repr(float(p[0])), repr(float(p[1]))])


def cmd_plot_data(args) -> int:
    art = _load_artifact(args.artifact)
    out = _out_dir(args.out) / "plot"
    out.mkdir(parents=True, exist_ok=True)
    outlines = {"D": art.D.poly, "E": art.E.poly, "E_combined": art.E_combined.poly}
    for name, P in outlines.items():
        if P.dim != 2:
            print(f"notice: {name} has dimension {P.dim}; outline skipped")
            continue
        _write_outline(out / f"outline_{name}.csv", polytope_outline(P), art.config_hash)
    for path in args.traces or []:
        try:
            tr = sim.Trace.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"trace {path!r} could not be read: {exc}") from exc
        if tr.metadata.get("config_hash") != art.config_hash:
            raise InputError(f"trace {path!r} belongs to a different artifact")
        r = np.asarray(tr.metadata["r"], dtype=float)
        t = r.size
        lo = np.array([-pt.support(art.R.poly, -e).value for e in np.eye(t)])
        hi = np.array([pt.support(art.R.poly, e).value for e in np.eye(t)])
        name = Path(path).stem
        with open(out / f"series_{name}.csv", "w", newline="") as fh:
            fh.write(f"# config_hash={art.config_hash}\n")
            wr = csv.writer(fh, lineterminator="\n")
            head = ["k"]
            for i in range(t):
                head += [f"zr[{i}]", f"r[{i}]", f"band_lo[{i}]", f"band_hi[{i}]"]
            head += [f"u[{j}]" for j in range(tr.u.shape[1])]
            wr.writerow(head)
            for k in range(len(tr)):
                row = [int(tr.k[k])]
                for i in range(t):
                    row += [repr(float(tr.zr[k, i])), repr(float(r[i])),
                            repr(float(r[i] + lo[i])), repr(float(r[i] + hi[i]))]
                row += [repr(float(x)) for x in tr.u[k]]
                wr.writerow(row)
    print(f"plot data written to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rompc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    out_help = f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})"

    p = sub.add_parser("synthesize", help="run the offline pipeline and write an artifact")
    p.add_argument("--config", required=True, help="builtin name (synthetic, beam) or JSON file")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="run the artifact's scenarios")
    p.add_argument("--artifact", required=True)
    p.add_argument("--scenario", action="append", help="scenario name (repeatable)")
    p.add_argument("--replay", help="witness scenario JSON to inject after convergence")
    p.add_argument("--seed-override", type=int)
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="re-check an artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.add_argument("--runs", type=int, default=100, help="seeds for the full-level robustness sample")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot-data", help="export set outlines and time series as CSV")
    p.add_argument("--artifact", required=True)
    p.add_argument("--traces", nargs="*", help="trace JSON files from simulate")
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_plot_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
