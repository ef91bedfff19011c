import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rompc.lti import (DimensionError, StateSpace, TrackingSelector, is_schur, outputs,
                       spectral_radius, step)


def _sys(A, B, C=None, H=None):
    A = np.atleast_2d(A)
    n = A.shape[0]
    C = np.eye(n) if C is None else C
    H = np.eye(n) if H is None else H
    return StateSpace(A, B, C, H)


def test_step_zero():
    s = _sys(np.eye(2), np.ones((2, 1)))
    assert np.array_equal(step(s, np.zeros(2), np.zeros(1), np.zeros(2)), np.zeros(2))


def test_step_identity_dynamics():
    s = _sys(np.eye(2), np.zeros((2, 1)))
    assert np.allclose(step(s, [1, 2], [7.0], [0, 0]), [1, 2])


def test_step_hand_arithmetic():
    s = _sys(np.diag([0.5, 0.25]), np.array([[1.0], [1.0]]))
    assert np.allclose(step(s, [1, 1], [1], [0.1, -0.1]), [1.6, 1.15], atol=1e-15)


def test_step_dimension_mismatch():
    s = _sys(np.eye(2), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        step(s, np.zeros(3), np.zeros(1))


def test_construction_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        StateSpace(np.eye(2), np.ones((3, 1)), np.eye(2), np.eye(2))
    with pytest.raises((DimensionError, ValueError)):
        StateSpace(np.array([[np.nan]]), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))


def test_outputs():
    s = _sys(np.zeros((6, 6)), np.zeros((6, 1)), np.array([[1.29, 0.24, 0, 0, 0, 0]]),
             np.hstack([np.eye(2), np.zeros((2, 4))]))
    y, z = outputs(s, [1, 1, 0, 0, 0, 0])
    assert y == pytest.approx([1.53])
    assert np.allclose(z, [1, 1])
    y0, z0 = outputs(s, np.zeros(6))
    assert not y0.any() and not z0.any()


def test_identity_readout():
    s = _sys(np.eye(3), np.zeros((3, 1)))
    x = np.array([1.0, -2.0, 3.0])
    y, z = outputs(s, x)
    assert np.array_equal(y, x) and np.array_equal(z, x)


def test_spectral_radius_examples():
    assert spectral_radius(np.zeros((3, 3))) == 0.0
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0, rel=1e-12)
    a = np.pi / 6
    Rot = 0.9 * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    assert spectral_radius(Rot) == pytest.approx(0.9, rel=1e-10)


def test_is_schur_examples():
    assert is_schur(np.zeros((2, 2)), 1e-9)
    assert not is_schur(np.eye(2), 1e-9)
    assert is_schur(np.diag([0.99, -0.5]), 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_step_linearity(seed):
    r = np.random.default_rng(seed)
    s = StateSpace(r.standard_normal((4, 4)), r.standard_normal((4, 2)),
                   r.standard_normal((1, 4)), r.standard_normal((2, 4)))
    x1, x2, u1, u2, w1, w2 = (r.standard_normal(k) for k in (4, 4, 2, 2, 4, 4))
    lhs = step(s, x1 + x2, u1 + u2, w1 + w2)
    rhs = step(s, x1, u1, w1) + step(s, x2, u2, w2) - step(s, np.zeros(4), np.zeros(2), np.zeros(4))
    assert np.allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3).filter(lambda a: abs(a) > 1e-3))
def test_spectral_radius_homogeneous(seed, alpha):
    A = np.random.default_rng(seed).standard_normal((5, 5))
    assert spectral_radius(alpha * A) == pytest.approx(abs(alpha) * spectral_radius(A), rel=1e-9)


def test_schur_closed_loop_decays(synthetic_artifact, rng):
    art = synthetic_artifact
    rom, g = art.rom, art.gains
    for M in (rom.A + rom.B @ g.K, rom.A - g.L @ rom.C, art.certificates and
              np.block([[art.plant.A, art.plant.B @ g.K],
                        [g.L @ art.plant.C, rom.A - g.L @ rom.C + rom.B @ g.K]])):
        assert is_schur(M)
        x0 = rng.standard_normal(M.shape[0])
        assert np.linalg.norm(np.linalg.matrix_power(M, 200) @ x0) < 1e-6 * np.linalg.norm(x0)


def test_tracking_selector():
    T = TrackingSelector([0], 2)
    assert np.array_equal(T.T, [[1.0, 0.0]])
    assert T.t == 1
    assert TrackingSelector.from_dict(T.to_dict()) == T
    with pytest.raises(ValueError):
        TrackingSelector([2], 2)


def test_statespace_roundtrip():
    s = _sys(np.diag([0.5, 0.2]), np.ones((2, 1)))
    assert StateSpace.from_dict(s.to_dict()) == s
