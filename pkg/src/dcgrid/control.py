"""Controllers for the microgrid.

Two layers:

* Nominal passivity-shaping laws (`nominal_source_input`,
  `nominal_load_input`): feedforward of the optimal steady state plus
  damping injection, which renders the energy-in-error-coordinates a
  Lyapunov function of the closed loop (`global_clf_decay_check`
  certifies the decay inequality).

* A per-subsystem safety filter (`ar_clf_qp`): each control channel is
  chosen as close as possible to its nominal value subject to a
  Lyapunov-decrease constraint stiffened by an adaptive resilience term
  (`resilience_term`).  The gain rho_j in that term grows whenever the
  input channel has authority over the local energy (`rho_derivative`),
  which lets the filter out-scale any injected input disturbance whose
  envelope grows at most exponentially.

Every operation here is local to one subsystem: a source controller
reads only its own terminal quantities and the bus voltage; the load
controller reads only bus-side quantities.  Nothing inspects the
disturbance itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import Equilibrium
from .model import (GridState, MicrogridParams, circuit_vector_field,
                    closed_loop_damping, q_diagonal)

__all__ = [
    "ControllerConfig",
    "ControllerState",
    "LieDerivatives",
    "QPDiagnostics",
    "QP_ACTIVE_NONE",
    "QP_ACTIVE_CLF",
    "QP_ACTIVE_LOWER",
    "QP_ACTIVE_UPPER",
    "QP_ACTIVE_NAMES",
    "nominal_source_input",
    "nominal_load_input",
    "lie_derivatives",
    "resilience_term",
    "ar_clf_qp",
    "rho_derivative",
    "global_clf_decay_check",
]

# Active-constraint codes recorded in traces (int8-friendly).
QP_ACTIVE_NONE = 0
QP_ACTIVE_CLF = 1
QP_ACTIVE_LOWER = 2
QP_ACTIVE_UPPER = 3
QP_ACTIVE_NAMES = ("none", "clf", "lower", "upper")


def _as_vector(state) -> np.ndarray:
    if isinstance(state, GridState):
        return state.vector
    return np.asarray(state, dtype=float)


@dataclass(frozen=True)
class ControllerConfig:
    """Gains and bounds shared by both controller kinds.

    Scalar fields broadcast to every subsystem; arrays give one value
    per subsystem (length n_sources for `alpha_source`, n_sources+1 for
    `beta`, `q`, `rho0`, full state dimension for `lam`).

    Attributes
    ----------
    alpha_source : voltage damping injected at each source [A/V]
    alpha_load : filter-current damping injected at the load converter
    beta : required Lyapunov decay rate per subsystem [1/s]
    q : adaptation rate of the resilience gain per subsystem
    rho0 : initial resilience gains
    alpha_decay : decay rate of the filter's denominator softening [1/s]
    rho_max : hard cap on every rho_j (guards exp overflow)
    lam : diagonal slack allowed in the decay certificate (>= 0, must
        stay below the closed-loop damping)
    i_s_max : upper bound of every source current command [A]
    eps_vb : bus-voltage threshold below which the load law falls back
        to pure feedforward [V]
    """

    alpha_source: float | np.ndarray = 1.0
    alpha_load: float = 0.1
    beta: float | np.ndarray = 5.0
    q: float | np.ndarray = 10.0
    rho0: float | np.ndarray = 0.0
    alpha_decay: float = 1.0
    rho_max: float = 30.0
    lam: float | np.ndarray = 0.0
    i_s_max: float = 100.0
    eps_vb: float = 0.5

    def __post_init__(self):
        def canon(name, value):
            arr = np.asarray(value, dtype=float)
            object.__setattr__(self, name, float(arr) if arr.ndim == 0 else arr)

        for name in ("alpha_source", "beta", "q", "rho0", "lam"):
            canon(name, getattr(self, name))
        checks = [
            ("alpha_source", self.alpha_source, "positive"),
            ("alpha_load", self.alpha_load, "positive"),
            ("beta", self.beta, "positive"),
            ("q", self.q, "positive"),
            ("rho0", self.rho0, "nonnegative"),
            ("alpha_decay", self.alpha_decay, "positive"),
            ("lam", self.lam, "nonnegative"),
            ("i_s_max", self.i_s_max, "positive"),
            ("eps_vb", self.eps_vb, "positive"),
        ]
        for name, value, kind in checks:
            arr = np.atleast_1d(np.asarray(value, dtype=float))
            ok = np.all(arr > 0) if kind == "positive" else np.all(arr >= 0)
            if not ok:
                raise ValueError(f"{name} must be {kind}, got {value}")
        if not self.rho_max >= float(np.max(np.atleast_1d(self.rho0))):
            raise ValueError("rho_max must be >= every initial rho0")

    def alpha_source_vec(self, n_sources: int) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.alpha_source, dtype=float), (n_sources,)).copy()

    def beta_vec(self, n_subsystems: int) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.beta, dtype=float), (n_subsystems,)).copy()

    def q_vec(self, n_subsystems: int) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.q, dtype=float), (n_subsystems,)).copy()

    def rho0_vec(self, n_subsystems: int) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.rho0, dtype=float), (n_subsystems,)).copy()

    def lam_vec(self, dim: int) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.lam, dtype=float), (dim,)).copy()


@dataclass
class ControllerState:
    """Mutable per-run controller memory.

    rho holds one adaptive gain per subsystem (sources first, load
    last); i_t0_error is each source's line-current error captured when
    the controller started, which feeds the decaying transient term of
    the nominal source law.
    """

    rho: np.ndarray
    i_t0_error: np.ndarray
    t_0: float = 0.0

    @classmethod
    def initial(cls, config: ControllerConfig, params: MicrogridParams,
                eq: Equilibrium, state0, t_0: float = 0.0) -> "ControllerState":
        x0 = _as_vector(state0)
        n = params.n_sources
        i_t0 = x0[1:2 * n:2] - eq.i_t
        return cls(rho=config.rho0_vec(n + 1), i_t0_error=i_t0, t_0=t_0)


@dataclass(frozen=True)
class LieDerivatives:
    """Decomposition V-dot = a + b*u of one subsystem's energy rate.

    a [W] collects everything the local input cannot touch; b is the
    input coefficient; V [J] is the local energy in error coordinates.
    a, b, V all vanish at zero subsystem error.
    """

    a: float
    b: float
    V: float


@dataclass(frozen=True)
class QPDiagnostics:
    feasible: bool
    active: str  # one of QP_ACTIVE_NAMES
    violation: float = 0.0  # residual of the decay constraint if infeasible

    @property
    def active_code(self) -> int:
        return QP_ACTIVE_NAMES.index(self.active)


def nominal_source_input(params: MicrogridParams, config: ControllerConfig,
                         eq: Equilibrium, state, ctrl: ControllerState,
                         t: float, j: int) -> float:
    """Current command for source j: steady feedforward, proportional
    voltage damping, and a transient term that replays the initial
    current error with the line's own decay rate.  Clamped to
    [0, i_s_max]."""
    x = _as_vector(state)
    v_hat = x[2 * j] - eq.v[j]
    alpha_j = config.alpha_source_vec(params.n_sources)[j]
    decay = math.exp(-params.R[j] * (t - ctrl.t_0) / params.L[j])
    u = eq.i_s[j] - alpha_j * v_hat + decay * ctrl.i_t0_error[j]
    return min(max(u, 0.0), config.i_s_max)


def nominal_load_input(params: MicrogridParams, config: ControllerConfig,
                       eq: Equilibrium, state) -> float:
    """Duty command: steady feedforward plus filter-current damping
    scaled by the measured bus voltage; pure feedforward when the bus
    is too low to divide by.  Clamped to [0, 1]."""
    x = _as_vector(state)
    n = params.n_sources
    v_b = x[2 * n]
    i_f_hat = x[2 * n + 1] - eq.i_f
    if v_b > config.eps_vb:
        d = eq.d_l - config.alpha_load * i_f_hat / v_b
    else:
        d = eq.d_l
    return min(max(d, 0.0), 1.0)


def lie_derivatives(params: MicrogridParams, eq: Equilibrium, state,
                    j: int) -> LieDerivatives:
    """Energy rate decomposition for subsystem j.

    j in [0, n_sources) selects a source; j == n_sources selects the
    load block.  The contract, testable by finite differences: for any
    input value u on this channel (the remaining channels held at
    whatever the state implies), a + b*u equals d/dt of V along the
    circuit field.
    """
    x = _as_vector(state)
    n = params.n_sources
    if not 0 <= j <= n:
        raise IndexError(f"subsystem index {j} out of range for {n} sources")
    if j < n:
        v_hat = x[2 * j] - eq.v[j]
        i_hat = x[2 * j + 1] - eq.i_t[j]
        v_b_hat = x[2 * n] - eq.v_b
        V = 0.5 * (params.C[j] * v_hat * v_hat
                   + params.L[j] * i_hat * i_hat)
        b = v_hat
        a = -v_hat * eq.i_s[j] - params.R[j] * i_hat * i_hat - i_hat * v_b_hat
        return LieDerivatives(a=a, b=b, V=V)
    v_b = x[2 * n]
    i_f = x[2 * n + 1]
    v_l = x[2 * n + 2]
    v_b_hat = v_b - eq.v_b
    i_f_hat = i_f - eq.i_f
    v_l_hat = v_l - eq.v_l
    V = 0.5 * (params.C_b * v_b_hat * v_b_hat
               + params.L_f * i_f_hat * i_f_hat
               + params.C_l * v_l_hat * v_l_hat)
    b = -v_b_hat * i_f + i_f_hat * v_b
    sum_it = 0.0
    for p in range(n):
        sum_it += x[2 * p + 1]
    a = (v_b_hat * (sum_it - v_b / params.R_l)
         - i_f_hat * v_l
         + v_l_hat * (i_f - v_l / params.r_l))
    return LieDerivatives(a=a, b=b, V=V)


def resilience_term(b: float, rho: float, t: float,
                    alpha_decay: float) -> float:
    """Adaptive stiffening of the decay constraint.

    b^2 * e^rho / (|b| + e^(-alpha_decay*t)): quadratic in the input
    authority near b = 0 (so it vanishes smoothly with the constraint
    itself), asymptotically |b|*e^rho once the softening has decayed.
    """
    return b * b * math.exp(rho) / (abs(b) + math.exp(-alpha_decay * t))


def rho_derivative(b: float, q: float) -> float:
    """Growth rate of the resilience gain: q * |b| >= 0."""
    return q * abs(b)


def ar_clf_qp(ld: LieDerivatives, u_nom: float, rho: float, t: float,
              config: ControllerConfig, bounds: tuple[float, float],
              j: int = 0) -> tuple[float, QPDiagnostics]:
    """Safety-filtered input for one channel.

    Solves  min (u - u_nom)^2  s.t.  a + b*u + r <= -beta*V,
    u in [lo, hi], where r is the resilience term — a scalar QP whose
    solution is the projection of u_nom onto the box intersected with a
    half-line.  When that intersection is empty the filter returns the
    least-violation point (the box endpoint minimizing a + b*u; for
    b = 0 the tie is broken toward u_nom) and flags the step instead of
    aborting.

    `j` indexes per-subsystem gain arrays in `config` (beta).
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if lo > hi:
        raise ValueError(f"empty input box [{lo}, {hi}]")
    beta_j = float(np.atleast_1d(np.asarray(config.beta, dtype=float))
                   [j if np.ndim(config.beta) else 0])
    a, b, V = ld.a, ld.b, ld.V
    r = resilience_term(b, rho, t, config.alpha_decay)

    # residual(u) > 0 means the decay constraint is violated at u
    def residual(u):
        return a + b * u + r + beta_j * V

    if b > 0.0:
        bound = (-beta_j * V - a - r) / b
        if bound < lo:
            return lo, QPDiagnostics(False, "clf", residual(lo))
        u, act = u_nom, QP_ACTIVE_NONE
        if u > hi:
            u, act = hi, QP_ACTIVE_UPPER
        if u > bound:
            u, act = bound, QP_ACTIVE_CLF
        if u < lo:
            u, act = lo, QP_ACTIVE_LOWER
        return u, QPDiagnostics(True, QP_ACTIVE_NAMES[act])
    if b < 0.0:
        bound = (-beta_j * V - a - r) / b
        if bound > hi:
            return hi, QPDiagnostics(False, "clf", residual(hi))
        u, act = u_nom, QP_ACTIVE_NONE
        if u > hi:
            u, act = hi, QP_ACTIVE_UPPER
        if u < lo:
            u, act = lo, QP_ACTIVE_LOWER
        if u < bound:
            u, act = bound, QP_ACTIVE_CLF
        return u, QPDiagnostics(True, QP_ACTIVE_NAMES[act])
    # b == 0: the constraint does not involve u
    u, act = u_nom, QP_ACTIVE_NONE
    if u > hi:
        u, act = hi, QP_ACTIVE_UPPER
    if u < lo:
        u, act = lo, QP_ACTIVE_LOWER
    viol = a + r + beta_j * V
    if viol <= 0.0:
        return u, QPDiagnostics(True, QP_ACTIVE_NAMES[act])
    return u, QPDiagnostics(False, QP_ACTIVE_NAMES[act], viol)


def global_clf_decay_check(params: MicrogridParams, config: ControllerConfig,
                           eq: Equilibrium, state, inputs,
                           tol: float = 1e-9) -> tuple[float, bool]:
    """Certify the closed-loop energy decay inequality at one state.

    Computes H-dot = grad H(x - x*) . f(x, u) along the circuit field
    with the supplied (nominal, disturbance-free) inputs and checks

        H-dot <= -(x - x*)^T Q (R_cl - Lam) Q (x - x*) + tol

    where R_cl is the closed-loop damping produced by the nominal laws
    and Lam is the configured slack.  Returns (H-dot, pass).  Raises if
    the slack swallows the damping (R_cl - Lam must stay positive
    definite, otherwise the certificate is vacuous).
    """
    x = _as_vector(state)
    inputs = np.asarray(inputs, dtype=float)
    x_hat = x - eq.state
    qdiag = q_diagonal(params)
    r_star = closed_loop_damping(
        params, config.alpha_source_vec(params.n_sources), config.alpha_load)
    lam = config.lam_vec(params.dim)
    margin = r_star - lam
    if not np.all(margin > 0.0):
        raise ValueError(
            "lam must leave the closed-loop damping positive definite")
    grad = qdiag * x_hat
    h_dot = float(grad @ circuit_vector_field(params, x, inputs))
    bound = -float(np.sum(grad * grad * margin))
    return h_dot, h_dot <= bound + tol
