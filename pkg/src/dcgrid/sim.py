"""Closed-loop simulation, trace logging and resilience metrics.

`run_scenario` wires the pieces together: it solves for the optimal
steady state, captures the controller's initial condition, materializes
the disturbance noise table, hands everything to the compiled core, and
wraps the result in a `Trace` plus derived `Metrics`.

`integrate_reference` is a deliberate line-by-line pure-Python mirror
of `_core.integrate` (same statements, same evaluation order, same libm
calls).  The test suite runs both on short horizons and requires the
traces to match, which guards the compiled fast path against both
compilation surprises and accidental divergence of the two copies.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import _core
from .attack import AttackSpec, ChannelAttack, noise_table
from .control import ControllerConfig, ControllerState
from .equilibrium import Equilibrium, solve_opf
from .model import MicrogridParams, q_diagonal

__all__ = [
    "Scenario",
    "Trace",
    "Metrics",
    "TraceFormatError",
    "CONTROLLER_KINDS",
    "VERDICT_CONVERGED",
    "VERDICT_BOUNDED",
    "VERDICT_DIVERGED",
    "run_scenario",
    "step_rk4",
    "compute_metrics",
    "integrate_reference",
]

CONTROLLER_KINDS = ("nominal", "ar_clf_qp")

VERDICT_CONVERGED = "CONVERGED"
VERDICT_BOUNDED = "BOUNDED-UNDER-ATTACK"
VERDICT_DIVERGED = "DIVERGED"

_H_SLACK = 1e-9  # absolute slack when judging energy decrease per step


class TraceFormatError(ValueError):
    """Raised when a trace CSV does not match the documented layout."""


def _integer_ratio(big: float, small: float, name: str) -> int:
    ratio = big / small
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-6 * max(1.0, abs(ratio)):
        raise ValueError(f"{name}: {big} must be an integer multiple of {small}")
    return n


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one reproducible closed-loop run.

    h is the integrator step, h_c the control period (controller output
    held in between), h_log the trace sampling period; T must be an
    integer multiple of all of them.  `initial_state` of None starts at
    the optimal steady state.
    """

    params: MicrogridParams
    v_b_target: float = 24.0
    d_l_target: float = 0.5
    quadratic_duty: bool = True
    controller_kind: str = "nominal"
    config: ControllerConfig = field(default_factory=ControllerConfig)
    attack: AttackSpec | None = None
    T: float = 20.0
    h: float = 1e-5
    h_c: float = 1e-4
    h_log: float = 1e-3
    initial_state: np.ndarray | None = None
    divergence_threshold: float = 1e6
    output_prefix: str | None = None

    def __post_init__(self):
        if self.controller_kind not in CONTROLLER_KINDS:
            raise ValueError(
                f"controller_kind must be one of {CONTROLLER_KINDS}, "
                f"got {self.controller_kind!r}")
        if not 0.0 < self.h <= self.h_c <= self.T:
            raise ValueError(
                f"need 0 < h <= h_c <= T, got h={self.h}, h_c={self.h_c}, "
                f"T={self.T}")
        if self.h_log < self.h:
            raise ValueError(f"h_log={self.h_log} must be >= h={self.h}")
        _integer_ratio(self.h_c, self.h, "h_c/h")
        _integer_ratio(self.h_log, self.h, "h_log/h")
        _integer_ratio(self.T, self.h_c, "T/h_c")
        _integer_ratio(self.T, self.h_log, "T/h_log")
        if self.divergence_threshold <= 0:
            raise ValueError("divergence_threshold must be positive")
        attack = self.attack
        if attack is None:
            attack = AttackSpec(channels=tuple(
                ChannelAttack() for _ in range(self.params.n_inputs)))
        if attack.n_channels != self.params.n_inputs:
            raise ValueError(
                f"attack defines {attack.n_channels} channels, the network "
                f"has {self.params.n_inputs} input channels")
        # the noise hold interval is the control period by construction
        if attack.noise_hold != self.h_c:
            attack = replace(attack, noise_hold=self.h_c)
        object.__setattr__(self, "attack", attack)
        if self.initial_state is not None:
            x0 = np.asarray(self.initial_state, dtype=float)
            if x0.shape != (self.params.dim,):
                raise ValueError(
                    f"initial_state has shape {x0.shape}, expected "
                    f"({self.params.dim},)")
            object.__setattr__(self, "initial_state", x0)

    @property
    def n_macro(self) -> int:
        return int(round(self.T / self.h_c))

    def equilibrium(self) -> Equilibrium:
        return solve_opf(self.params, self.v_b_target, self.d_l_target,
                         quadratic_duty=self.quadratic_duty)


@dataclass
class Trace:
    """Uniformly sampled log of one run.

    states rows follow the interleaved layout of `model`; u is the
    commanded input vector, delta the disturbance, applied the vector
    actually entering the plant (u + delta, with the duty channel kept
    in [0, 1]); V has one energy per subsystem (sources first, load
    last) and H is their sum; qp_feasible / qp_active carry the safety
    filter diagnostics held over each control period.
    """

    n_sources: int
    t: np.ndarray
    states: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    applied: np.ndarray
    V: np.ndarray
    H: np.ndarray
    rho: np.ndarray
    qp_feasible: np.ndarray
    qp_active: np.ndarray
    diverged: bool = False
    t_divergence: float | None = None

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def n_channels(self) -> int:
        return self.n_sources + 1

    def column_names(self) -> list[str]:
        n, k = self.n_sources, self.n_channels
        cols = ["t"]
        for j in range(n):
            cols += [f"v{j + 1}", f"it{j + 1}"]
        cols += ["vb", "if", "vl"]
        cols += [f"u{i + 1}" for i in range(k)]
        cols += [f"delta{i + 1}" for i in range(k)]
        cols += [f"V{i + 1}" for i in range(k)]
        cols += ["H"]
        cols += [f"rho{i + 1}" for i in range(k)]
        cols += ["qp_feasible_mask"]
        return cols

    def feasible_mask(self) -> np.ndarray:
        bits = np.zeros(len(self), dtype=np.int64)
        for i in range(self.n_channels):
            bits |= self.qp_feasible[:, i].astype(np.int64) << i
        return bits

    def to_csv(self, path) -> None:
        cols = self.column_names()
        data = np.column_stack([
            self.t, self.states, self.u, self.delta, self.V, self.H,
            self.rho, self.feasible_mask().astype(float),
        ])
        if data.shape[1] != len(cols):
            raise AssertionError("trace column bookkeeping out of sync")
        np.savetxt(path, data, delimiter=",", comments="",
                   header=",".join(cols), fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        if hasattr(path, "read"):
            text = path.read()
        else:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise TraceFormatError("empty trace file (missing header)")
        cols = [c.strip() for c in lines[0].split(",")]
        n = sum(1 for c in cols
                if c.startswith("it") and c[2:].isdigit())
        if n < 1:
            raise TraceFormatError(
                "header has no line-current columns; not a trace CSV")
        k = n + 1
        dim = 2 * n + 3
        expected = 1 + dim + 4 * k + 1 + 1
        probe = cls(n_sources=n, t=np.zeros(0), states=np.zeros((0, dim)),
                    u=np.zeros((0, k)), delta=np.zeros((0, k)),
                    applied=np.zeros((0, k)), V=np.zeros((0, k)),
                    H=np.zeros(0), rho=np.zeros((0, k)),
                    qp_feasible=np.zeros((0, k), dtype=bool),
                    qp_active=np.zeros((0, k), dtype=np.int8))
        if cols != probe.column_names() or len(cols) != expected:
            raise TraceFormatError(
                f"unexpected trace header {cols[:6]}...; expected the "
                f"documented layout for {n} sources")
        if len(lines) == 1:
            return probe
        data = np.loadtxt(io.StringIO("\n".join(lines[1:])),
                          delimiter=",", ndmin=2)
        if data.shape[1] != expected:
            raise TraceFormatError(
                f"rows have {data.shape[1]} fields, header promises "
                f"{expected}")
        pos = 0

        def take(width):
            nonlocal pos
            block = data[:, pos:pos + width]
            pos += width
            return block

        t = take(1)[:, 0]
        states = take(dim)
        u = take(k)
        delta = take(k)
        V = take(k)
        H = take(1)[:, 0]
        rho = take(k)
        mask = take(1)[:, 0].astype(np.int64)
        feas = np.zeros((len(t), k), dtype=bool)
        for i in range(k):
            feas[:, i] = (mask >> i) & 1
        applied = u + delta
        applied[:, n] = np.clip(applied[:, n], 0.0, 1.0)
        return cls(n_sources=n, t=t, states=states, u=u, delta=delta,
                   applied=applied, V=V, H=H, rho=rho, qp_feasible=feas,
                   qp_active=np.zeros((len(t), k), dtype=np.int8))


@dataclass
class Metrics:
    """Post-run summary consumed by the acceptance checks.

    Deviation percentages are taken over the attack window (earliest
    channel start through the end of the trace; the whole trace when no
    channel is active).  The ultimate bound is measured in the
    energy-weighted error norm sqrt(x_hat' Q x_hat): the radius is the
    worst norm over the last quarter of the window and the settling
    time is the first instant after which the norm never exceeds it.
    """

    verdict: str
    diverged: bool
    t_divergence: float | None
    attack_window_start: float
    bus_deviation_pct: float
    current_overshoot_pct: dict[str, float]
    max_current_overshoot_pct: float
    uub_radius: float
    settling_time: float
    qp_feasible_fraction: float
    pre_attack_h_nonincreasing_fraction: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "diverged": self.diverged,
            "t_divergence": self.t_divergence,
            "attack_window_start": self.attack_window_start,
            "bus_deviation_pct": self.bus_deviation_pct,
            "current_overshoot_pct": dict(self.current_overshoot_pct),
            "max_current_overshoot_pct": self.max_current_overshoot_pct,
            "uub_radius": self.uub_radius,
            "settling_time": self.settling_time,
            "qp_feasible_fraction": self.qp_feasible_fraction,
            "pre_attack_h_nonincreasing_fraction":
                self.pre_attack_h_nonincreasing_fraction,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(
            verdict=d["verdict"],
            diverged=bool(d["diverged"]),
            t_divergence=d["t_divergence"],
            attack_window_start=float(d["attack_window_start"]),
            bus_deviation_pct=float(d["bus_deviation_pct"]),
            current_overshoot_pct={k: float(v) for k, v in
                                   d["current_overshoot_pct"].items()},
            max_current_overshoot_pct=float(d["max_current_overshoot_pct"]),
            uub_radius=float(d["uub_radius"]),
            settling_time=float(d["settling_time"]),
            qp_feasible_fraction=float(d["qp_feasible_fraction"]),
            pre_attack_h_nonincreasing_fraction=float(
                d["pre_attack_h_nonincreasing_fraction"]),
        )


def step_rk4(fieldfn: Callable, state, h: float):
    """One classical 4th-order Runge-Kutta step of x' = fieldfn(x)."""
    k1 = fieldfn(state)
    k2 = fieldfn(state + 0.5 * h * k1)
    k3 = fieldfn(state + 0.5 * h * k2)
    k4 = fieldfn(state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _core_arguments(scenario: Scenario, use_reference: bool = False):
    """Marshal a Scenario into the flat argument tuple of the core."""
    p = scenario.params
    eq = scenario.equilibrium()
    x0 = (eq.state if scenario.initial_state is None
          else scenario.initial_state.copy())
    cfg = scenario.config
    ctrl = ControllerState.initial(cfg, p, eq, x0, t_0=0.0)
    attack = scenario.attack
    n_holds = scenario.n_macro + 1
    if np.any(attack.sigmas() > 0.0):
        noise = noise_table(attack, n_holds)
    else:
        noise = np.zeros((n_holds, attack.n_channels))
    kind = CONTROLLER_KINDS.index(scenario.controller_kind)
    k = p.n_inputs
    args = (
        x0.astype(float), p.n_sources,
        p.C.astype(float), p.L.astype(float), p.R.astype(float),
        float(p.C_b), float(p.L_f), float(p.C_l), float(p.R_l), float(p.r_l),
        eq.v.astype(float), eq.i_t.astype(float), float(eq.v_b),
        float(eq.i_f), float(eq.v_l), float(eq.d_l),
        kind,
        cfg.alpha_source_vec(p.n_sources), float(cfg.alpha_load),
        cfg.beta_vec(k), cfg.q_vec(k), cfg.rho0_vec(k),
        float(cfg.alpha_decay), float(cfg.rho_max), float(cfg.i_s_max),
        float(cfg.eps_vb), ctrl.i_t0_error.astype(float), float(ctrl.t_0),
        attack.kind_codes(), attack.param_matrix(),
        bool(attack.relative_time), noise,
        float(scenario.h), float(scenario.h_c), float(scenario.T),
        float(scenario.h_log), float(scenario.divergence_threshold),
    )
    return args


def _wrap_core_output(scenario: Scenario, raw) -> Trace:
    (t, x, u, delta, applied, V, H, rho, feas, act, diverged, t_div) = raw
    return Trace(
        n_sources=scenario.params.n_sources,
        t=np.asarray(t), states=np.asarray(x), u=np.asarray(u),
        delta=np.asarray(delta), applied=np.asarray(applied),
        V=np.asarray(V), H=np.asarray(H), rho=np.asarray(rho),
        qp_feasible=np.asarray(feas).astype(bool),
        qp_active=np.asarray(act),
        diverged=bool(diverged),
        t_divergence=(float(t_div) if diverged else None),
    )


def run_scenario(scenario: Scenario,
                 use_reference: bool = False) -> tuple[Trace, Metrics]:
    """Integrate the scenario and summarize it.

    use_reference swaps in the interpreted mirror of the core (orders of
    magnitude slower; meant for short cross-check runs).
    """
    args = _core_arguments(scenario)
    core = integrate_reference if use_reference else _core.integrate
    raw = core(*args)
    trace = _wrap_core_output(scenario, raw)
    metrics = compute_metrics(trace, scenario)
    return trace, metrics


def compute_metrics(trace: Trace, scenario: Scenario) -> Metrics:
    """Deviation, boundedness and filter statistics of one trace."""
    if len(trace) == 0:
        raise ValueError("cannot compute metrics of an empty trace")
    eq = scenario.equilibrium()
    n = trace.n_sources
    attack = scenario.attack
    any_attack = attack.any_active
    w0 = attack.earliest_start if any_attack else None
    window_start = float(min(w0, trace.t[-1])) if w0 is not None else 0.0

    in_window = trace.t >= window_start - 1e-12
    if not np.any(in_window):
        in_window = np.zeros(len(trace), dtype=bool)
        in_window[-1] = True

    v_b = trace.states[:, 2 * n]
    bus_dev = float(np.max(np.abs(v_b[in_window] - eq.v_b)) / eq.v_b * 100.0)

    overshoot: dict[str, float] = {}
    for j in range(n):
        ij = trace.states[in_window, 2 * j + 1]
        overshoot[f"i_t{j + 1}"] = float(
            np.max(np.abs(ij - eq.i_t[j])) / abs(eq.i_t[j]) * 100.0)
    i_f = trace.states[in_window, 2 * n + 1]
    overshoot["i_f"] = float(
        np.max(np.abs(i_f - eq.i_f)) / abs(eq.i_f) * 100.0)
    max_overshoot = max(overshoot.values())

    # energy-weighted error norm; H is exactly 0.5 * ||x_hat||_Q^2
    norms = np.sqrt(2.0 * np.maximum(trace.H, 0.0))
    idx0 = int(np.argmax(in_window))
    span = len(trace) - idx0
    q_start = idx0 + (3 * span) // 4
    q_start = min(q_start, len(trace) - 1)
    radius = float(np.max(norms[q_start:]))
    worst_from_here = np.maximum.accumulate(norms[::-1])[::-1]
    inside = worst_from_here <= radius * (1.0 + 1e-12) + 1e-15
    settle_idx = int(np.argmax(inside)) if np.any(inside) else len(trace) - 1
    settling_time = float(trace.t[settle_idx])

    feas_fraction = float(np.mean(trace.qp_feasible)) if len(trace) else 1.0

    if any_attack and window_start > trace.t[0]:
        pre = trace.H[trace.t < window_start - 1e-12]
    elif any_attack:
        pre = trace.H[:0]
    else:
        pre = trace.H
    if pre.shape[0] >= 2:
        dec = np.diff(pre) <= _H_SLACK
        pre_frac = float(np.mean(dec))
    else:
        pre_frac = 1.0

    if trace.diverged:
        verdict = VERDICT_DIVERGED
    elif any_attack:
        verdict = VERDICT_BOUNDED
    else:
        verdict = VERDICT_CONVERGED

    return Metrics(
        verdict=verdict,
        diverged=trace.diverged,
        t_divergence=trace.t_divergence,
        attack_window_start=window_start,
        bus_deviation_pct=bus_dev,
        current_overshoot_pct=overshoot,
        max_current_overshoot_pct=float(max_overshoot),
        uub_radius=radius,
        settling_time=settling_time,
        qp_feasible_fraction=feas_fraction,
        pre_attack_h_nonincreasing_fraction=pre_frac,
    )


def integrate_reference(x0, n, C, L, R, C_b, L_f, C_l, R_l, r_l,
                        eq_v, eq_it, eq_vb, eq_if, eq_vl, eq_d,
                        kind, alpha_source, alpha_load, beta, qgain, rho0,
                        alpha_decay, rho_max, i_s_max, eps_vb, i_t0_err, t0,
                        attack_kinds, attack_prm, relative_time, noise,
                        h, h_c, T, h_log, div_threshold):
    """Interpreted mirror of `_core.integrate`; see its docstring.

    Keep every statement in lockstep with the compiled version — the
    cross-check test requires the two to produce identical traces.
    """
    def det_attack_value(kind_i, prm, t):
        if kind_i == 0 or t < prm[7]:
            return 0.0
        if kind_i == 1:
            return prm[0]
        if kind_i == 2:
            tau = t - prm[7] if relative_time else t
            return prm[1] + prm[2] * tau
        arg = prm[6] * (t - prm[7])
        if arg > 700.0:
            arg = 700.0
        return prm[3] * (prm[4] + prm[5] * math.exp(arg))

    def delta_fill(t, m, out):
        for i in range(out.shape[0]):
            det = det_attack_value(attack_kinds[i], attack_prm[i], t)
            nz = 0.0
            if attack_kinds[i] != 0 and t >= attack_prm[i, 7]:
                nz = noise[m, i]
            out[i] = det + nz

    def field(x, u, out):
        sum_it = 0.0
        for j in range(n):
            v = x[2 * j]
            it = x[2 * j + 1]
            out[2 * j] = (u[j] - it) / C[j]
            out[2 * j + 1] = (v - R[j] * it - x[2 * n]) / L[j]
            sum_it += it
        vb = x[2 * n]
        i_f = x[2 * n + 1]
        vl = x[2 * n + 2]
        d = u[n]
        out[2 * n] = (sum_it - vb / R_l - i_f * d) / C_b
        out[2 * n + 1] = (-vl + vb * d) / L_f
        out[2 * n + 2] = (i_f - vl / r_l) / C_l

    def qp(a, b, V, u_nom, rho_i, t, beta_i, lo, hi):
        r = b * b * math.exp(rho_i) / (abs(b) + math.exp(-alpha_decay * t))
        if b > 0.0:
            bound = (-beta_i * V - a - r) / b
            if bound < lo:
                return lo, 0, _core.ACT_CLF, a + b * lo + r + beta_i * V
            u = u_nom
            act = _core.ACT_NONE
            if u > hi:
                u = hi
                act = _core.ACT_UPPER
            if u > bound:
                u = bound
                act = _core.ACT_CLF
            if u < lo:
                u = lo
                act = _core.ACT_LOWER
            return u, 1, act, 0.0
        if b < 0.0:
            bound = (-beta_i * V - a - r) / b
            if bound > hi:
                return hi, 0, _core.ACT_CLF, a + b * hi + r + beta_i * V
            u = u_nom
            act = _core.ACT_NONE
            if u > hi:
                u = hi
                act = _core.ACT_UPPER
            if u < lo:
                u = lo
                act = _core.ACT_LOWER
            if u < bound:
                u = bound
                act = _core.ACT_CLF
            return u, 1, act, 0.0
        u = u_nom
        act = _core.ACT_NONE
        if u > hi:
            u = hi
            act = _core.ACT_UPPER
        if u < lo:
            u = lo
            act = _core.ACT_LOWER
        viol = a + r + beta_i * V
        if viol <= 0.0:
            return u, 1, act, 0.0
        return u, 0, act, viol

    def controller(x, t, u_out, b_out, V_out, feas_out, act_out, viol_out):
        vb = x[2 * n]
        vb_hat = vb - eq_vb
        for j in range(n):
            v_hat = x[2 * j] - eq_v[j]
            i_hat = x[2 * j + 1] - eq_it[j]
            u_nom = (eq_it[j] - alpha_source[j] * v_hat
                     + math.exp(-R[j] * (t - t0) / L[j]) * i_t0_err[j])
            if u_nom < 0.0:
                u_nom = 0.0
            if u_nom > i_s_max:
                u_nom = i_s_max
            V = 0.5 * (C[j] * v_hat * v_hat + L[j] * i_hat * i_hat)
            b = v_hat
            a = -v_hat * eq_it[j] - R[j] * i_hat * i_hat - i_hat * vb_hat
            V_out[j] = V
            b_out[j] = b
            if kind == _core.CTRL_AR_CLF_QP:
                u, feas, act, viol = qp(a, b, V, u_nom, rho[j], t, beta[j],
                                        0.0, i_s_max)
            else:
                u, feas, act, viol = u_nom, 1, _core.ACT_NONE, 0.0
            u_out[j] = u
            feas_out[j] = feas
            act_out[j] = act
            viol_out[j] = viol
        i_f = x[2 * n + 1]
        vl = x[2 * n + 2]
        if_hat = i_f - eq_if
        vl_hat = vl - eq_vl
        if vb > eps_vb:
            d_nom = eq_d - alpha_load * if_hat / vb
        else:
            d_nom = eq_d
        if d_nom < 0.0:
            d_nom = 0.0
        if d_nom > 1.0:
            d_nom = 1.0
        V = 0.5 * (C_b * vb_hat * vb_hat + L_f * if_hat * if_hat
                   + C_l * vl_hat * vl_hat)
        b = -vb_hat * i_f + if_hat * vb
        sum_it = 0.0
        for p in range(n):
            sum_it += x[2 * p + 1]
        a = (vb_hat * (sum_it - vb / R_l) - if_hat * vl
             + vl_hat * (i_f - vl / r_l))
        V_out[n] = V
        b_out[n] = b
        if kind == _core.CTRL_AR_CLF_QP:
            u, feas, act, viol = qp(a, b, V, d_nom, rho[n], t, beta[n],
                                    0.0, 1.0)
        else:
            u, feas, act, viol = d_nom, 1, _core.ACT_NONE, 0.0
        u_out[n] = u
        feas_out[n] = feas
        act_out[n] = act
        viol_out[n] = viol

    dim = 2 * n + 3
    k = n + 1
    n_macro = int(round(T / h_c))
    n_sub = int(round(h_c / h))
    log_every = int(round(h_log / h))
    n_total = n_macro * n_sub
    n_rec = n_total // log_every + 1

    t_log = np.zeros(n_rec)
    x_log = np.zeros((n_rec, dim))
    u_log = np.zeros((n_rec, k))
    delta_log = np.zeros((n_rec, k))
    applied_log = np.zeros((n_rec, k))
    V_log = np.zeros((n_rec, k))
    H_log = np.zeros(n_rec)
    rho_log = np.zeros((n_rec, k))
    feas_log = np.zeros((n_rec, k), dtype=np.uint8)
    act_log = np.zeros((n_rec, k), dtype=np.int8)

    x = x0.copy()
    rho = rho0.copy()
    u_cmd = np.zeros(k)
    b_held = np.zeros(k)
    V_scratch = np.zeros(k)
    feas = np.zeros(k, dtype=np.uint8)
    act = np.zeros(k, dtype=np.int8)
    viol = np.zeros(k)

    k1 = np.zeros(dim)
    k2 = np.zeros(dim)
    k3 = np.zeros(dim)
    k4 = np.zeros(dim)
    xs = np.zeros(dim)
    dvec = np.zeros(k)
    ua = np.zeros(k)

    diverged = 0
    t_div = -1.0
    rec = 0
    done = False

    def log_record(rec, t, m):
        t_log[rec] = t
        h_total = 0.0
        for j in range(n):
            v_hat = x[2 * j] - eq_v[j]
            i_hat = x[2 * j + 1] - eq_it[j]
            vj = 0.5 * (C[j] * v_hat * v_hat + L[j] * i_hat * i_hat)
            V_log[rec, j] = vj
            h_total += vj
        vb_hat = x[2 * n] - eq_vb
        if_hat = x[2 * n + 1] - eq_if
        vl_hat = x[2 * n + 2] - eq_vl
        vk = 0.5 * (C_b * vb_hat * vb_hat + L_f * if_hat * if_hat
                    + C_l * vl_hat * vl_hat)
        V_log[rec, n] = vk
        h_total += vk
        H_log[rec] = h_total
        delta_fill(t, m, dvec)
        for i in range(dim):
            x_log[rec, i] = x[i]
        for i in range(k):
            u_log[rec, i] = u_cmd[i]
            delta_log[rec, i] = dvec[i]
            applied_log[rec, i] = u_cmd[i] + dvec[i]
            rho_log[rec, i] = rho[i]
            feas_log[rec, i] = feas[i]
            act_log[rec, i] = act[i]
        if applied_log[rec, n] < 0.0:
            applied_log[rec, n] = 0.0
        if applied_log[rec, n] > 1.0:
            applied_log[rec, n] = 1.0

    def assemble(t, m):
        delta_fill(t, m, dvec)
        for i in range(k):
            ua[i] = u_cmd[i] + dvec[i]
        if ua[n] < 0.0:
            ua[n] = 0.0
        if ua[n] > 1.0:
            ua[n] = 1.0

    for m in range(n_macro):
        t_macro = m * h_c
        controller(x, t_macro, u_cmd, b_held, V_scratch, feas, act, viol)
        for s in range(n_sub):
            step = m * n_sub + s
            t = step * h
            if step % log_every == 0:
                log_record(rec, t, m)
                rec += 1

            assemble(t, m)
            field(x, ua, k1)
            t_half = t + 0.5 * h
            assemble(t_half, m)
            for i in range(dim):
                xs[i] = x[i] + 0.5 * h * k1[i]
            field(xs, ua, k2)
            for i in range(dim):
                xs[i] = x[i] + 0.5 * h * k2[i]
            field(xs, ua, k3)
            t_full = t + h
            assemble(t_full, m)
            for i in range(dim):
                xs[i] = x[i] + h * k3[i]
            field(xs, ua, k4)
            for i in range(dim):
                x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i]
                                           + 2.0 * k3[i] + k4[i])

            for i in range(dim):
                xi = x[i]
                if not math.isfinite(xi) or abs(xi) > div_threshold:
                    diverged = 1
                    t_div = (step + 1) * h
                    done = True
                    break
            if done:
                break
        if done:
            break
        for i in range(k):
            grown = rho[i] + qgain[i] * abs(b_held[i]) * h_c
            rho[i] = grown if grown < rho_max else rho_max

    if not done:
        log_record(rec, n_total * h, n_macro)
        rec += 1

    return (t_log[:rec], x_log[:rec], u_log[:rec], delta_log[:rec],
            applied_log[:rec], V_log[:rec], H_log[:rec], rho_log[:rec],
            feas_log[:rec], act_log[:rec], diverged, t_div)
