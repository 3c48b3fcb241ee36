"""Averaged model of a single-bus DC microgrid.

A network of current-controlled source converters feeds a common bus
capacitor through resistive-inductive lines; the bus supplies a local
resistive load and, through an averaged DC transformer (duty ratio d_l)
and an LC output filter, a second resistive load.

State vector layout (dimension 2*n_sources + 3)::

    [v_1, i_t1, v_2, i_t2, ..., v_n, i_tn, v_b, i_f, v_l]

where v_j is the terminal capacitor voltage of source j [V], i_tj the
line current from source j into the bus [A], v_b the bus voltage [V],
i_f the transformer/filter inductor current [A] and v_l the load-side
filter voltage [V].

Input vector layout (dimension n_sources + 1)::

    [i_s1, ..., i_sn, d_l]

with i_sj the commanded converter current [A] and d_l in [0, 1] the
averaged transformer duty ratio.

The same dynamics are exposed twice: directly as circuit equations
(`circuit_vector_field`) and as an interconnection of port-Hamiltonian
subsystems (`build_ph` / `ph_vector_field`).  The two routes are
algebraically identical and are cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MicrogridParams",
    "GridState",
    "PHSubsystem",
    "state_dim",
    "pack_state",
    "pack_inputs",
    "q_diagonal",
    "circuit_vector_field",
    "hamiltonian",
    "build_ph",
    "ph_vector_field",
    "check_port_cancellation",
    "closed_loop_damping",
    "closed_loop_interconnection",
    "table1_params",
]


@dataclass(frozen=True)
class MicrogridParams:
    """Electrical constants of the network.

    Attributes
    ----------
    C : per-source terminal capacitance [F]
    L : per-source line inductance [H]
    R : per-source line resistance [Ohm]
    C_b : bus capacitance [F]
    L_f : load filter inductance [H]
    C_l : load filter capacitance [F]
    R_l : bus-side load resistance [Ohm]
    r_l : filter-side load resistance [Ohm]
    """

    C: np.ndarray
    L: np.ndarray
    R: np.ndarray
    C_b: float
    L_f: float
    C_l: float
    R_l: float
    r_l: float

    def __post_init__(self):
        for name in ("C", "L", "R"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
        n = self.C.shape[0]
        if n < 1:
            raise ValueError("at least one source is required")
        if not (self.L.shape[0] == n and self.R.shape[0] == n):
            raise ValueError("C, L, R must have one entry per source")
        scalars = {"C_b": self.C_b, "L_f": self.L_f, "C_l": self.C_l,
                   "R_l": self.R_l, "r_l": self.r_l}
        for name, val in scalars.items():
            if not val > 0.0:
                raise ValueError(f"{name} must be positive, got {val}")
        for name in ("C", "L", "R"):
            if not np.all(getattr(self, name) > 0.0):
                raise ValueError(f"all entries of {name} must be positive")

    @property
    def n_sources(self) -> int:
        return self.C.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.n_sources + 3

    @property
    def n_inputs(self) -> int:
        return self.n_sources + 1


def table1_params() -> MicrogridParams:
    """Reference two-source bench parameters (capacitances in F, etc.)."""
    return MicrogridParams(
        C=np.array([0.49e-3, 0.57e-3]),
        L=np.array([0.09e-3, 0.08e-3]),
        R=np.array([18.78e-3, 17.78e-3]),
        C_b=0.47e-3,
        L_f=0.16e-3,
        C_l=0.47e-3,
        R_l=2.0,
        r_l=1.0,
    )


def state_dim(n_sources: int) -> int:
    return 2 * n_sources + 3


def pack_state(v: np.ndarray, i_t: np.ndarray, v_b: float, i_f: float,
               v_l: float) -> np.ndarray:
    """Assemble the interleaved state vector from named components."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    i_t = np.atleast_1d(np.asarray(i_t, dtype=float))
    if v.shape != i_t.shape:
        raise ValueError("v and i_t must have one entry per source")
    n = v.shape[0]
    x = np.empty(2 * n + 3)
    x[0:2 * n:2] = v
    x[1:2 * n:2] = i_t
    x[2 * n] = v_b
    x[2 * n + 1] = i_f
    x[2 * n + 2] = v_l
    return x


def pack_inputs(i_s: np.ndarray, d_l: float) -> np.ndarray:
    i_s = np.atleast_1d(np.asarray(i_s, dtype=float))
    return np.concatenate([i_s, [float(d_l)]])


@dataclass(frozen=True)
class GridState:
    """Named view over a state vector (see module docstring for layout)."""

    vector: np.ndarray
    n_sources: int

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=float)
        object.__setattr__(self, "vector", vec)
        if vec.shape != (state_dim(self.n_sources),):
            raise ValueError(
                f"state vector has shape {vec.shape}, expected "
                f"({state_dim(self.n_sources)},) for {self.n_sources} sources")
        if not np.all(np.isfinite(vec)):
            raise ValueError("state vector entries must be finite")

    @property
    def v(self) -> np.ndarray:
        return self.vector[0:2 * self.n_sources:2]

    @property
    def i_t(self) -> np.ndarray:
        return self.vector[1:2 * self.n_sources:2]

    @property
    def v_b(self) -> float:
        return float(self.vector[2 * self.n_sources])

    @property
    def i_f(self) -> float:
        return float(self.vector[2 * self.n_sources + 1])

    @property
    def v_l(self) -> float:
        return float(self.vector[2 * self.n_sources + 2])


def _check_shapes(params: MicrogridParams, state: np.ndarray,
                  inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    state = np.asarray(state, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if state.shape != (params.dim,):
        raise ValueError(
            f"state has shape {state.shape}, expected ({params.dim},)")
    if inputs.shape != (params.n_inputs,):
        raise ValueError(
            f"inputs have shape {inputs.shape}, expected ({params.n_inputs},)")
    return state, inputs


def circuit_vector_field(params: MicrogridParams, state: np.ndarray,
                         inputs: np.ndarray) -> np.ndarray:
    """Time derivative of the state under the averaged circuit equations.

    Callers must keep the duty ratio inputs[-1] inside [0, 1]; the
    averaged transformer model is not defined outside that range.
    """
    state, inputs = _check_shapes(params, state, inputs)
    n = params.n_sources
    v = state[0:2 * n:2]
    i_t = state[1:2 * n:2]
    v_b = state[2 * n]
    i_f = state[2 * n + 1]
    v_l = state[2 * n + 2]
    i_s = inputs[:n]
    d_l = inputs[n]

    out = np.empty_like(state)
    out[0:2 * n:2] = (i_s - i_t) / params.C
    out[1:2 * n:2] = (v - params.R * i_t - v_b) / params.L
    out[2 * n] = (i_t.sum() - v_b / params.R_l - i_f * d_l) / params.C_b
    out[2 * n + 1] = (-v_l + v_b * d_l) / params.L_f
    out[2 * n + 2] = (i_f - v_l / params.r_l) / params.C_l
    return out


def q_diagonal(params: MicrogridParams) -> np.ndarray:
    """Diagonal of the energy weight matrix Q (storage element constants)."""
    n = params.n_sources
    q = np.empty(params.dim)
    q[0:2 * n:2] = params.C
    q[1:2 * n:2] = params.L
    q[2 * n] = params.C_b
    q[2 * n + 1] = params.L_f
    q[2 * n + 2] = params.C_l
    return q


def hamiltonian(params: MicrogridParams, state: np.ndarray,
                reference: np.ndarray | None = None) -> float:
    """Total stored energy 0.5 * sum(q_i * (x_i - ref_i)^2) [J]."""
    state = np.asarray(state, dtype=float)
    if state.shape != (params.dim,):
        raise ValueError(
            f"state has shape {state.shape}, expected ({params.dim},)")
    err = state if reference is None else state - np.asarray(reference, dtype=float)
    return float(0.5 * np.dot(q_diagonal(params), err * err))


@dataclass(frozen=True)
class PHSubsystem:
    """One port-Hamiltonian block of the interconnected network.

    The subsystem dynamics in its own coordinates x are

        xdot = (J - R_mat) @ (Q @ x) + g(x) * u + g_z @ z

    with gradient of the local storage function grad H = Q @ x, a scalar
    control channel u, and interconnection port input z.  The port output
    is y = g_z.T @ Q @ x.  `index` slices the subsystem coordinates out
    of the global state vector.
    """

    Q: np.ndarray
    J: np.ndarray
    R_mat: np.ndarray
    g_z: np.ndarray
    index: slice
    is_load: bool = False
    g_const: np.ndarray = field(default=None)  # sources: constant input map

    def g(self, x_sub: np.ndarray) -> np.ndarray:
        if not self.is_load:
            return self.g_const
        # load input map depends on the operating point: duty couples the
        # filter inductor to the bus capacitor
        i_f = x_sub[1]
        v_b = x_sub[0]
        return np.array([-i_f / self.Q[0, 0], v_b / self.Q[1, 1], 0.0])

    def y(self, x_sub: np.ndarray) -> np.ndarray:
        return self.g_z.T @ (self.Q @ x_sub)


def build_ph(params: MicrogridParams) -> list[PHSubsystem]:
    """Port-Hamiltonian decomposition: one block per source plus the load.

    The load input map uses the bus capacitance on its first entry so
    that the duty-ratio channel transfers the filter current off the bus
    capacitor; with that choice the interconnection reproduces the
    circuit equations exactly.
    """
    n = params.n_sources
    subs: list[PHSubsystem] = []
    for j in range(n):
        C, L, R = params.C[j], params.L[j], params.R[j]
        subs.append(PHSubsystem(
            Q=np.diag([C, L]),
            J=np.array([[0.0, -1.0 / (L * C)], [1.0 / (L * C), 0.0]]),
            R_mat=np.diag([0.0, R / L**2]),
            g_const=np.array([1.0 / C, 0.0]),
            g_z=np.array([[0.0], [1.0 / L]]),
            index=slice(2 * j, 2 * j + 2),
        ))
    C_b, L_f, C_l = params.C_b, params.L_f, params.C_l
    g_z_load = np.zeros((3, n))
    g_z_load[0, :] = -1.0 / C_b
    subs.append(PHSubsystem(
        Q=np.diag([C_b, L_f, C_l]),
        J=np.array([
            [0.0, 0.0, 0.0],
            [0.0, 0.0, -1.0 / (L_f * C_l)],
            [0.0, 1.0 / (L_f * C_l), 0.0],
        ]),
        R_mat=np.diag([1.0 / (params.R_l * C_b**2), 0.0,
                       1.0 / (params.r_l * C_l**2)]),
        g_z=g_z_load,
        index=slice(2 * n, 2 * n + 3),
        is_load=True,
    ))
    return subs


def _ports(subsystems: list[PHSubsystem], state: np.ndarray) -> list[np.ndarray]:
    """Port inputs z for each subsystem: sources see the negated bus
    voltage, the load sees the negated line currents."""
    n = len(subsystems) - 1
    v_b = state[2 * n]
    i_t = state[1:2 * n:2]
    z = [np.array([-v_b]) for _ in range(n)]
    z.append(-i_t.copy())
    return z


def ph_vector_field(subsystems: list[PHSubsystem], state: np.ndarray,
                    inputs: np.ndarray) -> np.ndarray:
    """State derivative assembled from the port-Hamiltonian blocks."""
    state = np.asarray(state, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    n = len(subsystems) - 1
    dim = state_dim(n)
    if state.shape != (dim,):
        raise ValueError(f"state has shape {state.shape}, expected ({dim},)")
    if inputs.shape != (n + 1,):
        raise ValueError(
            f"inputs have shape {inputs.shape}, expected ({n + 1},)")
    z = _ports(subsystems, state)
    out = np.empty_like(state)
    for j, sub in enumerate(subsystems):
        x_sub = state[sub.index]
        grad = sub.Q @ x_sub
        out[sub.index] = ((sub.J - sub.R_mat) @ grad
                          + sub.g(x_sub) * inputs[j]
                          + sub.g_z @ z[j])
    return out


def check_port_cancellation(subsystems: list[PHSubsystem],
                            state: np.ndarray) -> float:
    """Net power exchanged through the interconnection ports.

    Returns sum_j y_j.T z_j, which is exactly zero for a
    power-preserving interconnection (up to float round-off).
    """
    state = np.asarray(state, dtype=float)
    z = _ports(subsystems, state)
    total = 0.0
    for j, sub in enumerate(subsystems):
        total += float(sub.y(state[sub.index]) @ z[j])
    return total


def closed_loop_damping(params: MicrogridParams, alpha_source: np.ndarray,
                        alpha_load: float) -> np.ndarray:
    """Diagonal of the target closed-loop damping matrix R*.

    Feedback adds terminal-voltage damping alpha_j at each source and
    filter-current damping alpha_load at the load; the passive elements
    contribute their own dissipation.  Expressed in gradient coordinates
    (entries divide by the squared storage constants).
    """
    n = params.n_sources
    alpha_source = np.broadcast_to(np.asarray(alpha_source, dtype=float), (n,))
    r = np.empty(params.dim)
    r[0:2 * n:2] = alpha_source / params.C**2
    r[1:2 * n:2] = params.R / params.L**2
    r[2 * n] = 1.0 / (params.R_l * params.C_b**2)
    r[2 * n + 1] = alpha_load / params.L_f**2
    r[2 * n + 2] = 1.0 / (params.r_l * params.C_l**2)
    return r


def closed_loop_interconnection(params: MicrogridParams,
                                d_l_star: float) -> list[np.ndarray]:
    """Closed-loop skew blocks J*: sources keep their open-loop coupling,
    the load gains the duty-ratio coupling between bus and filter."""
    n = params.n_sources
    subs = build_ph(params)
    out = [sub.J.copy() for sub in subs[:n]]
    C_b, L_f, C_l = params.C_b, params.L_f, params.C_l
    j_load = np.array([
        [0.0, -d_l_star / (C_b * L_f), 0.0],
        [d_l_star / (C_b * L_f), 0.0, -1.0 / (C_l * L_f)],
        [0.0, 1.0 / (C_l * L_f), 0.0],
    ])
    out.append(j_load)
    return out
