import numpy as np
import pytest

from rompc import bounds as bd
from rompc import models
from rompc import polytope as pt
from rompc import synthesis as sy
from rompc.polytope import DirectionSet, HPolytope
from rompc.sim import replay_error_witness, replay_tracking_witness


def _zero(d):
    return pt.box(np.zeros(d), np.zeros(d))


@pytest.fixture(scope="module")
def identity_case():
    ex = models.synthetic_system()
    w = sy.CostWeights(np.eye(6), np.eye(1), 5)
    g, _ = sy.design_gains(ex.plant, w)
    return ex, g


def test_variable_count(identity_case):
    ex, g = identity_case
    p = ex.plant
    for tau in (1, 3, 7):
        lp = bd.build_error_lp(p, p, g, ex.Z, ex.U, ex.V, ex.W, bd.BoundSpec(tau=tau), "D", np.eye(6)[0])
        assert lp.c.size == p.n * (tau + 1) + 2 * p.n * (tau + 1) + (p.m + p.p + p.n + p.n) * tau


def test_pinned_start_without_injection(identity_case):
    ex, g = identity_case
    p = ex.plant
    sets = bd.ConstraintSets(ex.Z, _zero(1), _zero(6), _zero(1))
    no_obs = sy.Gains(g.K, np.zeros_like(g.L), g.K_f)
    res = bd.compute_D(p, p, no_obs, sets, bd.BoundSpec(tau=1, D0=_zero(6)))
    assert np.abs(res.gammas).max() <= 1e-9


def test_identity_noise_free_collapses(identity_case):
    ex, g = identity_case
    p = ex.plant
    sets = bd.ConstraintSets(ex.Z, ex.U, ex.W, ex.V).zero_disturbance()
    spec = bd.BoundSpec(tau=64)
    D = bd.compute_D(p, p, g, sets, spec)
    E = bd.compute_E(p, p, g, sets, spec)
    Ec = bd.compute_E_combined_baseline(p, p, g, sets, spec, D)
    for res in (D, E, Ec):
        assert np.abs(res.gammas).max() <= 1e-7


def test_short_window_is_unbounded(identity_case):
    # the kernel of K leaves D0 unbounded; a window shorter than the observability
    # index cannot pin the error
    ex, g = identity_case
    p = ex.plant
    sets = bd.ConstraintSets(ex.Z, ex.U, ex.W, ex.V)
    with pytest.raises(bd.BoundsFailure) as exc:
        bd.compute_D(p, p, g, sets, bd.BoundSpec(tau=2))
    assert exc.value.reason == "D_unbounded"


def test_time_invariance(synthetic_artifact):
    art = synthetic_artifact
    s = art.sets
    spec = bd.BoundSpec(tau=8)
    a = bd.build_error_lp(art.plant, art.rom, art.gains, s.Z, s.U, s.V, s.W, spec, "E", [1.0, 0.0])
    b = bd.build_error_lp(art.plant, art.rom, art.gains, s.Z, s.U, s.V, s.W, spec, "E", [1.0, 0.0],
                          origin=37)
    assert (a.Aeq != b.Aeq).nnz == 0 and (a.Aineq != b.Aineq).nnz == 0
    assert np.array_equal(a.beq, b.beq) and np.array_equal(a.bineq, b.bineq)
    assert np.array_equal(a.c, b.c) and a.names != b.names


def test_dominance_and_strict_improvement(synthetic_artifact):
    art = synthetic_artifact
    assert np.all(art.E.gammas <= art.E_combined.gammas + 2e-7)
    assert np.any(art.E.gammas < art.E_combined.gammas - 1e-6)
    gap = art.E_combined.extra["gamma_hat"] + art.E_combined.extra["h_HD"] - art.E_combined.gammas
    assert np.abs(gap).max() <= 1e-12


def test_algorithm_output_consistency(synthetic_artifact):
    art = synthetic_artifact
    assert pt.contained_in(art.D.poly, art.D0)
    assert not pt.is_empty(art.Zbar)
    assert pt.contained_in(art.Zbar, art.sets.Z)
    # K D inside U strictly
    for a, b in zip(art.sets.U.A, art.sets.U.b):
        assert pt.linear_image_support(art.D.poly, art.gains.K, a) < b
    assert pt.contained_in(art.Ubar, art.sets.U)


def test_tau_monotonicity(synthetic_artifact):
    art = synthetic_artifact
    dirs = DirectionSet(art.D.directions)
    g = []
    for tau in (16, 32):
        spec = bd.BoundSpec(tau=tau, D0=art.D0, directions_D=dirs)
        g.append(bd.compute_D(art.plant, art.rom, art.gains, art.sets, spec).gammas)
    assert np.all(g[1] <= g[0] + 2e-7)
    assert np.all(art.D.gammas <= g[1] + 2e-7)


def test_noise_monotonicity(synthetic_artifact):
    art = synthetic_artifact
    s = art.sets
    spec = bd.BoundSpec(tau=16, D0=art.D0)
    wide = bd.ConstraintSets(s.Z, s.U, HPolytope(s.W.A, 2 * s.W.b), HPolytope(s.V.A, 2 * s.V.b))
    for fn in (bd.compute_D, bd.compute_E):
        base = fn(art.plant, art.rom, art.gains, s, spec).gammas
        grown = fn(art.plant, art.rom, art.gains, wide, spec).gammas
        assert np.all(grown >= base - 2e-7)


def test_wide_disturbance_fails_and_is_diagnosed(synthetic_artifact):
    art = synthetic_artifact
    s = art.sets
    wide = bd.ConstraintSets(s.Z, s.U, HPolytope(s.W.A, 100 * s.W.b), HPolytope(s.V.A, 100 * s.V.b))
    with pytest.raises(bd.BoundsFailure):
        bd.compute_sets(art.plant, art.rom, art.gains, wide, 16)
    esc = bd.escalate_tau(art.plant, art.rom, art.gains, wide, 16, 32)
    assert esc.result is None and esc.diagnosis == "disturbances"
    assert [t for t, _ in esc.attempts] == [16, 32]


@pytest.mark.parametrize("kind", ["D", "E", "E_combined"])
def test_error_witness_replay(synthetic_artifact, kind):
    art = synthetic_artifact
    res = getattr(art, kind)
    for face in range(len(res.gammas)):
        scen = bd.extract_witness(res, face)
        target = scen["gamma"] if kind != "E_combined" else res.extra["gamma_hat"][face]
        got = replay_error_witness(art.plant, art.rom, art.gains, scen)
        assert got == pytest.approx(target, abs=1e-5)


def test_tracking_witness_replay(synthetic_artifact):
    art = synthetic_artifact
    for face in range(len(art.R.gammas)):
        scen = bd.extract_witness(art.R, face)
        got = replay_tracking_witness(art.plant, art.rom, art.gains, art.model.T.T, scen)
        assert got == pytest.approx(scen["gamma"], abs=1e-5)


def test_R_nonnegative_faces(synthetic_artifact):
    assert np.all(synthetic_artifact.R.gammas >= -1e-9)


def test_R_collapses_with_eps(identity_case):
    ex, g = identity_case
    p = ex.plant
    sets = bd.ConstraintSets(ex.Z, ex.U, ex.W, ex.V).zero_disturbance()
    D = _zero(6)
    values = []
    for eps in (1e-2, 1e-3, 1e-4):
        spec = bd.BoundSpec(tau=1, tau_ss=30, eps_x=eps, eps_u=eps)
        res = bd.compute_R(p, p, g, sets, ex.T, spec, ex.Z, ex.U, D)
        values.append(res.gammas.max())
    values = np.array(values)
    assert np.all(np.diff(values) <= 1e-9)
    c = values / (2 * np.array([1e-2, 1e-3, 1e-4]))
    assert values[-1] <= 1e-2 and c.max() <= 10 * c.min() + 1e-6


def test_extract_witness_errors(synthetic_artifact):
    res = synthetic_artifact.D
    with pytest.raises(IndexError):
        bd.extract_witness(res, len(res.gammas))
    empty = bd.BoundResult("D", res.poly, res.gammas, res.directions)
    with pytest.raises(ValueError):
        bd.extract_witness(empty, 0)


def test_bound_result_roundtrip(synthetic_artifact):
    res = synthetic_artifact.R
    back = bd.BoundResult.from_dict(res.to_dict())
    assert np.array_equal(back.gammas, res.gammas) and len(back.witnesses) == len(res.witnesses)


def test_bound_spec_validation():
    with pytest.raises(ValueError):
        bd.BoundSpec(tau=0)
    with pytest.raises(ValueError):
        bd.BoundSpec(tau=4, eps_x=0.0)
