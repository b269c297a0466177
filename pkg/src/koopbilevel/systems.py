"""Benchmark control-affine systems and nonlinear simulation.

All drift and input maps broadcast over leading batch axes so that sampling,
finite-difference Jacobians, and data assembly can run vectorized. Hybrid
systems (the compass-gait walker) carry their reset machinery in
:class:`HybridExtras`; resets are only ever applied at trajectory endpoints.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigError,
    DomainEvaluationError,
    HybridEventError,
    IntegrationError,
)

__all__ = [
    "ControlAffineSystem",
    "HybridExtras",
    "ControlSignal",
    "Trajectory",
    "eval_rhs",
    "rk4_step",
    "simulate",
    "apply_reset",
    "get_system",
    "SYSTEM_PRESETS",
]


@dataclass(frozen=True)
class HybridExtras:
    """Reset machinery for systems with an endpoint impact.

    ``jump_map`` resets velocities at impact (generalized positions are
    preserved); ``flip_map`` relabels the legs and is an involution;
    ``touchdown_guard`` is zero exactly at ground contact.
    """

    jump_map: Callable[[np.ndarray], np.ndarray]
    flip_map: Callable[[np.ndarray], np.ndarray]
    touchdown_guard: Callable[[np.ndarray], float]


@dataclass(frozen=True)
class ControlAffineSystem:
    """Control-affine dynamics ``dx/dt = drift(x) + input_map(x) @ u``."""

    name: str
    n_x: int
    n_u: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]
    state_box: np.ndarray
    hybrid: Optional[HybridExtras] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant input: knot k is held on [k*T/N, (k+1)*T/N)."""

    knots: np.ndarray
    T: float

    def __post_init__(self):
        knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        if knots.ndim == 1:
            knots = knots[:, None]
        object.__setattr__(self, "knots", knots)
        if knots.shape[0] < 1:
            raise ConfigError("control signal needs at least one knot")
        if not self.T > 0:
            raise ConfigError(f"control period must be positive, got T={self.T}")

    @property
    def N(self):
        return self.knots.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """States sampled on a strictly increasing time grid starting at 0."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        if times.ndim != 1 or states.shape[0] != times.shape[0]:
            raise ConfigError("trajectory times and states are inconsistent")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ConfigError("trajectory times must start at 0 and increase")

    @property
    def T(self):
        return float(self.times[-1])


def eval_rhs(system, x, u):
    """Evaluate ``drift(x) + input_map(x) @ u``; broadcasts over batches."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape[-1] != system.n_x:
        raise DomainEvaluationError(
            f"{system.name}: state has dim {x.shape[-1]}, expected {system.n_x}"
        )
    if u.shape[-1] != system.n_u:
        raise DomainEvaluationError(
            f"{system.name}: input has dim {u.shape[-1]}, expected {system.n_u}"
        )
    f = system.drift(x)
    if not np.all(np.isfinite(f)):
        raise DomainEvaluationError(f"{system.name}: drift returned non-finite values")
    G = system.input_map(x)
    if not np.all(np.isfinite(G)):
        raise DomainEvaluationError(
            f"{system.name}: input map returned non-finite values"
        )
    return f + np.einsum("...ij,...j->...i", G, np.broadcast_to(u, x.shape[:-1] + (system.n_u,)))


def rk4_step(system, x, u, h):
    """One classical fourth-order Runge-Kutta step with u held constant."""
    if not h > 0:
        raise IntegrationError(f"step size must be positive, got h={h}")
    k1 = eval_rhs(system, x, u)
    k2 = eval_rhs(system, x + 0.5 * h * k1, u)
    k3 = eval_rhs(system, x + 0.5 * h * k2, u)
    k4 = eval_rhs(system, x + h * k3, u)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(
            f"{system.name}: RK4 produced non-finite state at step size h={h}"
        )
    return out


def simulate(system, x0, signal, substeps=16):
    """Integrate under a piecewise-constant signal; samples at knot boundaries.

    Each knot interval of length T/N is integrated with ``substeps`` RK4
    steps. Returns a :class:`Trajectory` with N+1 samples.
    """
    if substeps < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")
    x0 = np.asarray(x0, dtype=float)
    N = signal.N
    h = signal.T / N / substeps
    states = np.empty((N + 1, system.n_x))
    states[0] = x0
    x = x0
    for k in range(N):
        u = signal.knots[k]
        for _ in range(substeps):
            x = rk4_step(system, x, u, h)
        states[k + 1] = x
    times = np.linspace(0.0, signal.T, N + 1)
    return Trajectory(times=times, states=states)


def apply_reset(extras, x, guard_tol=1e-8):
    """Apply the impact reset and leg relabeling: returns flip(jump(x)).

    The pre-impact state must lie on the guard surface within ``guard_tol``.
    """
    x = np.asarray(x, dtype=float)
    g = float(extras.touchdown_guard(x))
    if abs(g) > guard_tol:
        raise HybridEventError(
            f"reset applied off the guard surface (guard={g:.3e}, tol={guard_tol:.1e})"
        )
    return extras.flip_map(extras.jump_map(x))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

# Conventional damped harmonic oscillator; unit natural frequency puts the
# energy-optimal periods at integer multiples of 2*pi.
_A_OSCILLATOR = np.array([[0.0, 1.0], [-1.0, -0.2]])
# Literal matrix from the benchmark figure caption (a saddle; kept as a named
# preset so the discrepancy stays testable).
_A_OSCILLATOR_CAPTION = np.array([[1.0, 0.0], [-1.0, -0.2]])
_B_OSCILLATOR = np.array([[0.0], [1.0]])


def make_linear_system(A, B, name="linear", state_box=None):
    """Linear system dx/dt = A x + B u as a ControlAffineSystem."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n_x, n_u = B.shape
    if state_box is None:
        state_box = np.column_stack([-np.ones(n_x), np.ones(n_x)])

    def drift(x):
        return np.einsum("ij,...j->...i", A, x)

    def input_map(x):
        return np.broadcast_to(B, np.shape(x)[:-1] + B.shape)

    return ControlAffineSystem(
        name=name,
        n_x=n_x,
        n_u=n_u,
        drift=drift,
        input_map=input_map,
        state_box=np.asarray(state_box, dtype=float),
        params={"A": A, "B": B},
    )


def make_oscillator(caption_matrix=False):
    A = _A_OSCILLATOR_CAPTION if caption_matrix else _A_OSCILLATOR
    name = "oscillator_caption" if caption_matrix else "oscillator"
    return make_linear_system(A, _B_OSCILLATOR, name=name)


def make_pendulum(damping=0.1):
    """Normalized pendulum: d2q/dt2 = -sin q - damping*dq/dt + u.

    Gravity, length, and mass are normalized to 1. The viscous term is
    required for the energy-optimal periodic problem to have a nonzero
    optimum; damping=0.1 reproduces the benchmark cost level.
    """

    def drift(x):
        return np.stack(
            [x[..., 1], -np.sin(x[..., 0]) - damping * x[..., 1]], axis=-1
        )

    def input_map(x):
        G = np.zeros(np.shape(x)[:-1] + (2, 1))
        G[..., 1, 0] = 1.0
        return G

    box = np.array([[-np.pi / 2, np.pi / 2], [-2.0, 2.0]])
    return ControlAffineSystem(
        name="pendulum",
        n_x=2,
        n_u=1,
        drift=drift,
        input_map=input_map,
        state_box=box,
        params={"damping": damping},
    )


def make_compass_gait(hip_mass=2.0, leg_mass=1.0, leg_length=1.0, com_from_hip=0.5,
                      gravity=1.0):
    """Planar compass-gait walker with hip torque, normalized units.

    State ``x = (th_st, th_sw, dth_st, dth_sw)``: stance/swing leg angles
    measured from the downward vertical (positive when the leg's foot is ahead
    of the hip), plus their rates. Point masses: ``hip_mass`` at the hip and
    ``leg_mass`` per leg at distance ``com_from_hip`` below the hip. The
    stance foot is the pivot; the swing foot touches down when both feet are
    at ground height, after which the inelastic impact resets velocities and
    the legs are relabeled.
    """
    mh, m, ell, r, grav = hip_mass, leg_mass, leg_length, com_from_hip, gravity
    if not (0.0 < r < ell):
        raise ConfigError("leg center of mass must lie strictly between hip and foot")
    m11 = mh * ell**2 + m * (ell - r) ** 2 + m * ell**2
    m22 = m * r**2
    mlr = m * ell * r
    g_st = grav * (mh * ell + m * (ell - r) + m * ell)
    g_sw = grav * m * r

    def drift(x):
        th_st, th_sw = x[..., 0], x[..., 1]
        w_st, w_sw = x[..., 2], x[..., 3]
        c = np.cos(th_st - th_sw)
        s = np.sin(th_st - th_sw)
        m12 = -mlr * c
        # rhs of M(q) ddq = -C(q, dq) dq - grad V
        b1 = mlr * s * w_sw**2 + g_st * np.sin(th_st)
        b2 = -mlr * s * w_st**2 - g_sw * np.sin(th_sw)
        det = m11 * m22 - m12**2
        a_st = (m22 * b1 - m12 * b2) / det
        a_sw = (m11 * b2 - m12 * b1) / det
        return np.stack([w_st, w_sw, a_st, a_sw], axis=-1)

    def input_map(x):
        th_st, th_sw = x[..., 0], x[..., 1]
        m12 = -mlr * np.cos(th_st - th_sw)
        det = m11 * m22 - m12**2
        # hip torque acts as tau = (-u, +u) on (th_st, th_sw)
        G = np.zeros(np.shape(x)[:-1] + (4, 1))
        G[..., 2, 0] = (-m22 - m12) / det
        G[..., 3, 0] = (m11 + m12) / det
        return G

    def _floating_mass_matrix(th_st, th_sw):
        # coordinates (x_hip, y_hip, th_st, th_sw), point masses only
        M = np.zeros((4, 4))
        M[0, 0] = M[1, 1] = mh + 2.0 * m
        M[0, 2] = M[2, 0] = m * r * np.cos(th_st)
        M[1, 2] = M[2, 1] = m * r * np.sin(th_st)
        M[0, 3] = M[3, 0] = m * r * np.cos(th_sw)
        M[1, 3] = M[3, 1] = m * r * np.sin(th_sw)
        M[2, 2] = M[3, 3] = m * r**2
        return M

    def jump_map(x):
        """Inelastic impact at the swing foot; labels are not swapped here.

        Solved in floating-base coordinates: the ground impulse at the new
        contact point changes velocities so the swing foot sticks; angular
        positions are untouched.
        """
        x = np.asarray(x, dtype=float)
        th_st, th_sw, w_st, w_sw = x
        M = _floating_mass_matrix(th_st, th_sw)
        qd_minus = np.array(
            [-ell * np.cos(th_st) * w_st, -ell * np.sin(th_st) * w_st, w_st, w_sw]
        )
        J = np.array(
            [[1.0, 0.0, 0.0, ell * np.cos(th_sw)],
             [0.0, 1.0, 0.0, ell * np.sin(th_sw)]]
        )
        kkt = np.zeros((6, 6))
        kkt[:4, :4] = M
        kkt[:4, 4:] = -J.T
        kkt[4:, :4] = J
        rhs = np.concatenate([M @ qd_minus, np.zeros(2)])
        qd_plus = np.linalg.solve(kkt, rhs)[:4]
        return np.array([th_st, th_sw, qd_plus[2], qd_plus[3]])

    def flip_map(x):
        x = np.asarray(x, dtype=float)
        return x[..., [1, 0, 3, 2]]

    def touchdown_guard(x):
        # swing-foot height above ground; zero when both feet touch
        return float(ell * (np.cos(x[0]) - np.cos(x[1])))

    def kinetic_energy(x):
        """Total kinetic energy about the stance pivot (used by energy audits)."""
        th_st, th_sw, w_st, w_sw = np.asarray(x, dtype=float)
        M = _floating_mass_matrix(th_st, th_sw)
        qd = np.array(
            [-ell * np.cos(th_st) * w_st, -ell * np.sin(th_st) * w_st, w_st, w_sw]
        )
        return 0.5 * float(qd @ M @ qd)

    box = np.array(
        [[-0.35, 0.35], [-0.35, 0.35], [-1.5, 1.5], [-1.5, 1.5]]
    )
    extras = HybridExtras(
        jump_map=jump_map, flip_map=flip_map, touchdown_guard=touchdown_guard
    )
    return ControlAffineSystem(
        name="compass_gait",
        n_x=4,
        n_u=1,
        drift=drift,
        input_map=input_map,
        state_box=box,
        hybrid=extras,
        params={
            "hip_mass": mh,
            "leg_mass": m,
            "leg_length": ell,
            "com_from_hip": r,
            "gravity": grav,
            "kinetic_energy": kinetic_energy,
        },
    )


def step_length(system, x):
    """Horizontal distance between the feet: l*(sin th_sw - sin th_st)."""
    ell = system.params["leg_length"]
    x = np.asarray(x, dtype=float)
    return float(ell * (np.sin(x[1]) - np.sin(x[0])))


SYSTEM_PRESETS = {
    "oscillator": lambda **kw: make_oscillator(caption_matrix=False, **kw),
    "oscillator_caption": lambda **kw: make_oscillator(caption_matrix=True, **kw),
    "pendulum": make_pendulum,
    "compass_gait": make_compass_gait,
}


def get_system(name, **params):
    """Instantiate a named system preset with optional parameter overrides."""
    if name not in SYSTEM_PRESETS:
        raise ConfigError(
            f"unknown system preset '{name}'; available: {sorted(SYSTEM_PRESETS)}"
        )
    try:
        return SYSTEM_PRESETS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for system '{name}': {exc}") from exc
