"""Example plants: a six-state synthetic system and a hub-driven flexible beam.

The synthetic system keeps the printed output and performance maps of the
reference example; its dynamics matrices are a fixed substitute (see
``SYNTHETIC_A``). The beam is an Euler-Bernoulli finite element model in the
rotating hub frame, discretized with a zero-order hold.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from . import polytope as pt
from .lti import StateSpace, TrackingSelector, spectral_radius
from .polytope import HPolytope


@dataclass(frozen=True)
class ExampleProblem:
    """A plant with its tracking selector and constraint/disturbance sets.

    ``w_offset`` is a constant process-disturbance component (inside ``W``)
    that the simulator adds to every sample; it is zero unless the model has
    a persistent load.
    """

    plant: StateSpace
    T: TrackingSelector
    Z: HPolytope
    U: HPolytope
    W: HPolytope
    V: HPolytope
    w_offset: np.ndarray
    w_noise: np.ndarray
    v_noise: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON model-file form."""
        return {
            "plant": self.plant.to_dict(),
            "T": self.T.to_dict(),
            "Z": self.Z.to_dict(), "U": self.U.to_dict(),
            "W": self.W.to_dict(), "V": self.V.to_dict(),
            "w_offset": np.asarray(self.w_offset, dtype=float).tolist(),
            "w_noise": np.asarray(self.w_noise, dtype=float).tolist(),
            "v_noise": np.asarray(self.v_noise, dtype=float).tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExampleProblem":
        plant = StateSpace.from_dict(d["plant"])
        W = HPolytope.from_dict(d["W"])
        V = HPolytope.from_dict(d["V"])
        box_w, box_v = W.as_box(), V.as_box()
        # noise half-widths default to the box half-widths when not given
        w_off = np.asarray(d.get("w_offset", np.zeros(plant.n)), dtype=float)
        if "w_noise" in d:
            w_noise = np.asarray(d["w_noise"], dtype=float)
        else:
            w_noise = (box_w[1] - box_w[0]) / 2 if box_w else np.zeros(plant.n)
        if "v_noise" in d:
            v_noise = np.asarray(d["v_noise"], dtype=float)
        else:
            v_noise = (box_v[1] - box_v[0]) / 2 if box_v else np.zeros(plant.p)
        return cls(plant, TrackingSelector.from_dict(d["T"]), HPolytope.from_dict(d["Z"]),
                   HPolytope.from_dict(d["U"]), W, V, w_off, w_noise, v_noise,
                   dict(d.get("metadata", {})))


# Substitute dynamics for the synthetic example. Drawn once from a scaled
# Gaussian ensemble (spectral radius 0.886), rounded to three decimals, and
# kept because the full pipeline succeeds on it: S_f is nonsingular, the
# third Hankel value is about 0.2 of the first, the D/E set computation
# succeeds for tau >= 16 and the closed-loop matrix S_ss is Schur.
SYNTHETIC_A = np.array([
    [0.622, -0.778, 0.127, -0.173, -0.138, -0.066],
    [-0.615, -0.071, -0.264, 1.012, 0.069, -0.107],
    [-0.086, -0.203, -0.321, -0.119, 0.147, -0.073],
    [0.292, -0.061, 0.007, 0.471, 0.166, -0.154],
    [-0.056, 0.165, 0.589, -0.082, -0.074, 0.305],
    [-0.270, -0.089, 0.269, 0.177, 0.028, 0.204],
])
SYNTHETIC_B = np.array([[1.532], [-1.439], [-2.503], [0.415], [1.051], [-0.667]])
SYNTHETIC_C = np.array([[1.29, 0.24, 0.0, 0.0, 0.0, 0.0]])
SYNTHETIC_H = np.hstack([np.eye(2), np.zeros((2, 4))])
SYNTHETIC_SETPOINT = np.array([2.0])


def synthetic_system() -> ExampleProblem:
    plant = StateSpace(SYNTHETIC_A, SYNTHETIC_B, SYNTHETIC_C, SYNTHETIC_H)
    T = TrackingSelector([0], 2)
    rho = spectral_radius(plant.A)
    if rho >= 1.0:
        raise AssertionError(f"synthetic A is not Schur (rho={rho})")
    S_f = np.block([[plant.A - np.eye(6), plant.B], [T.T @ plant.H, np.zeros((1, 1))]])
    if np.linalg.matrix_rank(S_f) != 7:
        raise AssertionError("synthetic S_f is singular")
    return ExampleProblem(
        plant=plant, T=T,
        Z=pt.norm_ball_inf(10.0, 2), U=pt.norm_ball_inf(2.0, 1),
        W=pt.norm_ball_inf(0.05, 6), V=pt.norm_ball_inf(0.05, 1),
        w_offset=np.zeros(6), w_noise=np.full(6, 0.05), v_noise=np.full(1, 0.05),
        metadata={"name": "synthetic", "setpoint": SYNTHETIC_SETPOINT.tolist()},
    )


# ----------------------------------------------------------------------------
# discretization


def zoh_discretize(Ac, Bc, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via one augmented matrix exponential."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float).reshape(Ac.shape[0], -1)
    n, m = Bc.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac * dt
    aug[:n, n:] = Bc * dt
    E = sla.expm(aug)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError(f"matrix exponential overflowed for dt={dt}")
    return E[:n, :n], E[:n, n:]


# ----------------------------------------------------------------------------
# flexible beam


@dataclass(frozen=True)
class BeamParams:
    """Physical parameters of the hub-beam model (SI units).

    Defaults describe an aluminium strip of 0.96 m x 19 mm x 3.2 mm on a
    light hub, a laboratory single-link flexible manipulator.
    """

    n_elements: int = 4
    length: float = 0.96
    EI: float = 3.69
    rho_A: float = 0.165
    hub_inertia: float = 5.86e-4
    modal_damping: tuple[float, ...] | float = 0.05
    tip_load: float = 0.002
    dt: float = 0.01

    def __post_init__(self):
        if int(self.n_elements) < 1:
            raise ValueError("n_elements must be at least 1")
        for name in ("length", "EI", "rho_A", "hub_inertia", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not np.isfinite(self.tip_load):
            raise ValueError("tip_load must be finite")
        z = np.atleast_1d(np.asarray(self.modal_damping, dtype=float))
        if np.any(z <= 0) or np.any(z >= 1):
            raise ValueError("modal damping ratios must lie in (0, 1)")

    def damping_ratios(self, count: int) -> np.ndarray:
        z = np.atleast_1d(np.asarray(self.modal_damping, dtype=float))
        if z.size == 1:
            return np.full(count, z[0])
        if z.size < count:
            raise ValueError(f"{count} damping ratios needed, {z.size} given")
        return z[:count]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modal_damping"] = np.atleast_1d(np.asarray(self.modal_damping, float)).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BeamParams":
        d = dict(d)
        md = d.get("modal_damping", 0.05)
        if isinstance(md, list):
            d["modal_damping"] = md[0] if len(md) == 1 else tuple(md)
        return cls(**d)


def beam_element(EI: float, rho_A: float, le: float) -> tuple[np.ndarray, np.ndarray]:
    """Hermite-cubic element stiffness and consistent mass, DOF order (w1, t1, w2, t2)."""
    k = EI / le**3 * np.array([
        [12, 6 * le, -12, 6 * le],
        [6 * le, 4 * le**2, -6 * le, 2 * le**2],
        [-12, -6 * le, 12, -6 * le],
        [6 * le, 2 * le**2, -6 * le, 4 * le**2],
    ])
    m = rho_A * le / 420 * np.array([
        [156, 22 * le, 54, -13 * le],
        [22 * le, 4 * le**2, 13 * le, -3 * le**2],
        [54, 13 * le, 156, -22 * le],
        [-13 * le, -3 * le**2, -22 * le, 4 * le**2],
    ])
    return k, m


def _element_moments(rho_A: float, x0: float, le: float) -> np.ndarray:
    """``int rho_A x N_i(x) dx`` over one element, for the hub-deflection coupling."""
    # int x N over [x0, x0+le] with x = x0 + s
    base = np.array([le / 2, le**2 / 12, le / 2, -le**2 / 12])
    first = np.array([3 * le**2 / 20, le**3 / 30, 7 * le**2 / 20, -le**3 / 20])
    return rho_A * (x0 * base + first)


@dataclass(frozen=True)
class BeamFEM:
    """Second-order model ``M q'' + C q' + K q = b u + f q0`` with ``q = (theta, w1, t1, ...)``."""

    M: np.ndarray
    K: np.ndarray
    C: np.ndarray
    b_torque: np.ndarray
    f_load: np.ndarray
    tip_row: np.ndarray
    frequencies: np.ndarray


def assemble_beam(params: BeamParams) -> BeamFEM:
    """Hub + clamped-root beam in the rotating frame.

    Generalized coordinates are the hub angle followed by (deflection,
    slope) at each free node; the root node is clamped to the hub.
    """
    ne = int(params.n_elements)
    le = params.length / ne
    nd = 2 * ne
    Kb = np.zeros((nd + 2, nd + 2))
    Mb = np.zeros((nd + 2, nd + 2))
    coupling = np.zeros(nd + 2)
    load = np.zeros(nd + 2)
    k_e, m_e = beam_element(params.EI, params.rho_A, le)
    f_e = np.array([le / 2, le**2 / 12, le / 2, -le**2 / 12])
    for e in range(ne):
        idx = slice(2 * e, 2 * e + 4)
        Kb[idx, idx] += k_e
        Mb[idx, idx] += m_e
        coupling[idx] += _element_moments(params.rho_A, e * le, le)
        load[idx] += f_e
    free = slice(2, nd + 2)
    M = np.zeros((nd + 1, nd + 1))
    K = np.zeros((nd + 1, nd + 1))
    M[0, 0] = params.hub_inertia + params.rho_A * params.length**3 / 3
    M[0, 1:] = coupling[free]
    M[1:, 0] = coupling[free]
    M[1:, 1:] = Mb[free, free]
    K[1:, 1:] = Kb[free, free]
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("mass matrix is singular for these parameters") from exc
    # modal damping on the flexible modes only
    lam, Phi = sla.eigh(K, M)
    lam = np.clip(lam, 0.0, None)
    order = np.argsort(lam)
    lam, Phi = lam[order], Phi[:, order]
    omega = np.sqrt(lam)
    flex = np.arange(1, nd + 1)
    zeta = params.damping_ratios(flex.size)
    MP = M @ Phi[:, flex]
    C = MP @ np.diag(2 * zeta * omega[flex]) @ MP.T
    b = np.zeros(nd + 1)
    b[0] = 1.0
    f = np.zeros(nd + 1)
    f[0] = params.length**2 / 2
    f[1:] = load[free]
    tip = np.zeros(nd + 1)
    tip[0] = params.length
    tip[nd - 1] = 1.0
    return BeamFEM(M, K, 0.5 * (C + C.T), b, f, tip, omega[1:] / (2 * np.pi))


def static_tip_deflection(params: BeamParams, q0: float = 1.0) -> float:
    """Tip deflection of the clamped beam under a uniform load ``q0`` (hub held fixed)."""
    fem = assemble_beam(params)
    w = np.linalg.solve(fem.K[1:, 1:], q0 * fem.f_load[1:])
    return float(w[-2])


BEAM_SECOND_OUTPUTS = ("hub_angle", "root_moment", "hub_rate")


def flexible_beam(params: BeamParams | None = None,
                  Z_bounds=(0.5, 1.0), U_bound: float = 1.0,
                  w_noise: float = 2e-5, v_noise: float = 2e-4,
                  second_output: str = "hub_angle") -> ExampleProblem:
    """Discrete hub-beam plant with 2 * (1 + 2 n_elements) states.

    Input: hub torque. Measurement: hub angle. Performance: tip vertical
    position and a second hub quantity (hub angle by default; the root
    bending moment and the hub rate are alternatives). The tip position is
    tracked. The uniform
    load is a constant process disturbance ``w_offset``; ``W`` is the box
    ``|w| <= |w_offset| + w_noise`` so that it also contains zero.
    """
    params = params or BeamParams()
    fem = assemble_beam(params)
    nq = fem.M.shape[0]
    Minv = np.linalg.inv(fem.M)
    Ac = np.block([[np.zeros((nq, nq)), np.eye(nq)], [-Minv @ fem.K, -Minv @ fem.C]])
    Bc = np.concatenate([np.zeros(nq), Minv @ fem.b_torque])[:, None]
    Fc = np.concatenate([np.zeros(nq), Minv @ fem.f_load])[:, None]
    A, B = zoh_discretize(Ac, np.hstack([Bc, Fc]), params.dt)
    B, Bload = B[:, :1], B[:, 1]
    nx = 2 * nq
    C = np.zeros((1, nx))
    C[0, 0] = 1.0
    H = np.zeros((2, nx))
    H[0, :nq] = fem.tip_row
    if second_output == "root_moment":
        le = params.length / int(params.n_elements)
        H[1, 1] = 6 * params.EI / le**2
        H[1, 2] = -2 * params.EI / le
    elif second_output == "hub_rate":
        H[1, nq] = 1.0
    elif second_output == "hub_angle":
        H[1, 0] = 1.0
    else:
        raise ValueError(f"second_output must be one of {BEAM_SECOND_OUTPUTS}")
    plant = StateSpace(A, B, C, H)
    w_off = Bload * params.tip_load
    half = np.abs(w_off) + w_noise
    return ExampleProblem(
        plant=plant, T=TrackingSelector([0], 2),
        Z=pt.box(-np.asarray(Z_bounds, float), np.asarray(Z_bounds, float)),
        U=pt.norm_ball_inf(U_bound, 1),
        W=pt.box(-half, half), V=pt.norm_ball_inf(v_noise, 1),
        w_offset=w_off, w_noise=np.full(nx, w_noise), v_noise=np.full(1, v_noise),
        metadata={"name": "beam", "params": params.to_dict(), "second_output": second_output,
                  "frequencies_hz": fem.frequencies.tolist()},
    )
