import numpy as np
import pytest
from scipy.linalg import expm

from rompc import models
from rompc import polytope as pt
from rompc.lti import spectral_radius
from rompc.reduction import marginal_split


def test_synthetic_system_contract():
    ex = models.synthetic_system()
    p = ex.plant
    assert p.n == 6 and p.m == 1
    assert np.array_equal(p.C, [[1.29, 0.24, 0, 0, 0, 0]])
    assert np.array_equal(p.H, np.hstack([np.eye(2), np.zeros((2, 4))]))
    assert np.allclose(ex.Z.as_box()[1], 10) and np.allclose(ex.Z.as_box()[0], -10)
    assert np.allclose(ex.U.as_box()[1], 2) and ex.U.dim == 1
    assert np.allclose(ex.W.as_box()[1], 0.05) and np.allclose(ex.V.as_box()[1], 0.05)
    assert spectral_radius(p.A) < 1
    S_f = np.block([[p.A - np.eye(6), p.B], [ex.T.T @ p.H, np.zeros((1, 1))]])
    assert np.linalg.matrix_rank(S_f) == 7


def test_zoh_examples():
    A, B = models.zoh_discretize(np.zeros((2, 2)), np.ones((2, 1)), 0.1)
    assert np.allclose(A, np.eye(2)) and np.allclose(B, 0.1)
    A, B = models.zoh_discretize([[-1.0]], [[1.0]], np.log(2))
    assert A[0, 0] == pytest.approx(0.5, abs=1e-12) and B[0, 0] == pytest.approx(0.5, abs=1e-12)
    dt = 0.3
    A, B = models.zoh_discretize([[0, 1], [0, 0]], [[0], [1]], dt)
    assert np.allclose(A, [[1, dt], [0, 1]], atol=1e-14)
    assert np.allclose(B.ravel(), [dt**2 / 2, dt], atol=1e-14)
    Ac = np.array([[-0.3, 2.0], [-2.0, -0.1]])
    A, _ = models.zoh_discretize(Ac, [[0.0], [1.0]], 0.05)
    assert np.allclose(A, expm(Ac * 0.05), rtol=1e-10)
    with pytest.raises(ValueError):
        models.zoh_discretize(Ac, [[0.0], [1.0]], 0.0)


def test_beam_dimensions_and_modes():
    beam = models.flexible_beam()
    assert beam.plant.n == 18 and beam.plant.p == 1 and beam.plant.o == 2
    assert marginal_split(beam.plant, 1e-6).marginal_dim == 2


def test_beam_params_validation():
    with pytest.raises(ValueError):
        models.BeamParams(EI=0.0)
    with pytest.raises(ValueError):
        models.BeamParams(modal_damping=1.5)
    p = models.BeamParams()
    assert models.BeamParams.from_dict(p.to_dict()) == p


def test_static_tip_deflection_matches_cantilever():
    p = models.BeamParams()
    closed = p.length**4 / (8 * p.EI)
    assert models.static_tip_deflection(p, 1.0) == pytest.approx(closed, rel=0.02)


def test_fem_symmetry_and_rigid_mode():
    fem = models.assemble_beam(models.BeamParams())
    assert np.abs(fem.M - fem.M.T).max() <= 1e-12 and np.abs(fem.K - fem.K.T).max() <= 1e-12
    assert np.linalg.eigvalsh(fem.M).min() > 0
    k = np.linalg.eigvalsh(fem.K)
    assert k.min() > -1e-9 * k.max()
    assert np.sum(np.abs(k) <= 1e-9 * k.max()) == 1


def test_fem_convergence():
    f4 = models.assemble_beam(models.BeamParams(n_elements=4)).frequencies
    f8 = models.assemble_beam(models.BeamParams(n_elements=8)).frequencies
    assert np.all(np.abs(f8[:2] - f4[:2]) / f8[:2] < 0.01)


def test_energy_conservation():
    p = models.BeamParams()
    fem = models.assemble_beam(p)
    n = fem.M.shape[0]
    Minv = np.linalg.inv(fem.M)
    Ac = np.block([[np.zeros((n, n)), np.eye(n)], [-Minv @ fem.K, np.zeros((n, n))]])
    dt = 1e-3
    A, _ = models.zoh_discretize(Ac, np.zeros((2 * n, 1)), dt)
    rng = np.random.default_rng(0)
    s = np.concatenate([rng.standard_normal(n) * 1e-3, rng.standard_normal(n) * 1e-2])

    def energy(s):
        q, v = s[:n], s[n:]
        return 0.5 * v @ fem.M @ v + 0.5 * q @ fem.K @ q

    e0 = energy(s)
    for _ in range(int(10 / dt)):
        s = A @ s
    assert abs(energy(s) - e0) / e0 < 1e-3


def test_beam_load_is_inside_w():
    beam = models.flexible_beam()
    assert pt.contains(beam.W, beam.w_offset)
    assert np.any(beam.w_offset != 0)


def test_example_problem_roundtrip():
    ex = models.synthetic_system()
    back = models.ExampleProblem.from_dict(ex.to_dict())
    assert back.plant == ex.plant and np.array_equal(back.w_noise, ex.w_noise)
