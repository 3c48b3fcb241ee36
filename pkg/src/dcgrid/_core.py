"""Compiled closed-loop integration core.

One jitted function (`integrate`) advances plant, controllers, adaptive
gains and disturbances together so that microsecond-step runs over tens
of seconds finish in seconds.  Every piece is also exposed separately
(`circuit_field`, `qp_solve`, `controller_eval`, `det_attack_value`,
`delta_vector`) so the test suite can pin each one against the public
pure-Python implementations in `model`, `control` and `attack`; `sim`
additionally carries a line-by-line interpreted mirror of `integrate`
that the tests compare against this compiled version on short runs.

Scalar math uses `math.exp` etc. so compiled and interpreted paths call
the same libm and produce identical bits.

Integer conventions shared with the wrappers:
  controller kind: 0 nominal, 1 safety-filtered (CLF-QP)
  attack kind:     0 none, 1 constant, 2 polynomial, 3 exponential
  QP active code:  0 none, 1 clf, 2 lower, 3 upper
  attack parameter row: [c, p0, p1, s, o, g, kappa, start]
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

CTRL_NOMINAL = 0
CTRL_AR_CLF_QP = 1

ACT_NONE = 0
ACT_CLF = 1
ACT_LOWER = 2
ACT_UPPER = 3

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def det_attack_value(kind, prm, relative_time, t):
    """Noise-free disturbance of one channel at time t."""
    if kind == 0 or t < prm[7]:
        return 0.0
    if kind == 1:
        return prm[0]
    if kind == 2:
        tau = t - prm[7] if relative_time else t
        return prm[1] + prm[2] * tau
    arg = prm[6] * (t - prm[7])
    if arg > 700.0:
        arg = 700.0
    return prm[3] * (prm[4] + prm[5] * math.exp(arg))


@njit(**_JIT)
def delta_vector(t, m, kinds, prm, relative_time, noise, out):
    """Full disturbance vector at time t using held noise row m."""
    for i in range(out.shape[0]):
        det = det_attack_value(kinds[i], prm[i], relative_time, t)
        nz = 0.0
        if kinds[i] != 0 and t >= prm[i, 7]:
            nz = noise[m, i]
        out[i] = det + nz


@njit(**_JIT)
def circuit_field(x, u, n, C, L, R, C_b, L_f, C_l, R_l, r_l, out):
    """Averaged circuit dynamics; u[n] (duty) must already be in [0,1]."""
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


@njit(**_JIT)
def qp_solve(a, b, V, u_nom, rho, t, beta, alpha_decay, lo, hi):
    """Closed-form scalar CLF-QP; returns (u, feasible, active, violation).

    Must stay in exact lockstep with control.ar_clf_qp.
    """
    r = b * b * math.exp(rho) / (abs(b) + math.exp(-alpha_decay * t))
    if b > 0.0:
        bound = (-beta * V - a - r) / b
        if bound < lo:
            return lo, 0, ACT_CLF, a + b * lo + r + beta * V
        u = u_nom
        act = ACT_NONE
        if u > hi:
            u = hi
            act = ACT_UPPER
        if u > bound:
            u = bound
            act = ACT_CLF
        if u < lo:
            u = lo
            act = ACT_LOWER
        return u, 1, act, 0.0
    if b < 0.0:
        bound = (-beta * V - a - r) / b
        if bound > hi:
            return hi, 0, ACT_CLF, a + b * hi + r + beta * V
        u = u_nom
        act = ACT_NONE
        if u > hi:
            u = hi
            act = ACT_UPPER
        if u < lo:
            u = lo
            act = ACT_LOWER
        if u < bound:
            u = bound
            act = ACT_CLF
        return u, 1, act, 0.0
    u = u_nom
    act = ACT_NONE
    if u > hi:
        u = hi
        act = ACT_UPPER
    if u < lo:
        u = lo
        act = ACT_LOWER
    viol = a + r + beta * V
    if viol <= 0.0:
        return u, 1, act, 0.0
    return u, 0, act, viol


@njit(**_JIT)
def controller_eval(x, t, kind, n, C, L, R, C_b, L_f, C_l, R_l, r_l,
                    eq_v, eq_it, eq_vb, eq_if, eq_vl, eq_d,
                    alpha_source, alpha_load, beta, alpha_decay,
                    i_s_max, eps_vb, i_t0_err, t0, rho,
                    u_out, b_out, V_out, feas_out, act_out, viol_out):
    """All channel commands plus per-subsystem diagnostics at one instant."""
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
        if kind == CTRL_AR_CLF_QP:
            u, feas, act, viol = qp_solve(a, b, V, u_nom, rho[j], t, beta[j],
                                          alpha_decay, 0.0, i_s_max)
        else:
            u = u_nom
            feas = 1
            act = ACT_NONE
            viol = 0.0
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
    if kind == CTRL_AR_CLF_QP:
        u, feas, act, viol = qp_solve(a, b, V, d_nom, rho[n], t, beta[n],
                                      alpha_decay, 0.0, 1.0)
    else:
        u = d_nom
        feas = 1
        act = ACT_NONE
        viol = 0.0
    u_out[n] = u
    feas_out[n] = feas
    act_out[n] = act
    viol_out[n] = viol


@njit(**_JIT)
def integrate(x0, n, C, L, R, C_b, L_f, C_l, R_l, r_l,
              eq_v, eq_it, eq_vb, eq_if, eq_vl, eq_d,
              kind, alpha_source, alpha_load, beta, qgain, rho0,
              alpha_decay, rho_max, i_s_max, eps_vb, i_t0_err, t0,
              attack_kinds, attack_prm, relative_time, noise,
              h, h_c, T, h_log, div_threshold):
    """Full closed-loop run.

    Controller evaluated every h_c and held; plant advanced with
    classical RK4 at step h; the deterministic disturbance is evaluated
    at each RK4 stage time while its noise row is held per control
    period; adaptive gains updated once per control period from the
    held |b| (their derivative is constant across the period, so the
    update is exact) and capped at rho_max.  State samples every h_log.

    Returns (t_log, x_log, u_log, delta_log, applied_log, V_log, H_log,
    rho_log, feas_log, act_log, diverged, t_div); arrays are truncated
    at the divergence point when the run blows up.
    """
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

    for m in range(n_macro):
        t_macro = m * h_c
        controller_eval(x, t_macro, kind, n, C, L, R, C_b, L_f, C_l, R_l,
                        r_l, eq_v, eq_it, eq_vb, eq_if, eq_vl, eq_d,
                        alpha_source, alpha_load, beta, alpha_decay,
                        i_s_max, eps_vb, i_t0_err, t0, rho,
                        u_cmd, b_held, V_scratch, feas, act, viol)
        for s in range(n_sub):
            step = m * n_sub + s
            t = step * h
            if step % log_every == 0:
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
                delta_vector(t, m, attack_kinds, attack_prm, relative_time,
                             noise, dvec)
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
                rec += 1

            # RK4 with the disturbance sampled at the stage times
            delta_vector(t, m, attack_kinds, attack_prm, relative_time,
                         noise, dvec)
            for i in range(k):
                ua[i] = u_cmd[i] + dvec[i]
            if ua[n] < 0.0:
                ua[n] = 0.0
            if ua[n] > 1.0:
                ua[n] = 1.0
            circuit_field(x, ua, n, C, L, R, C_b, L_f, C_l, R_l, r_l, k1)

            t_half = t + 0.5 * h
            delta_vector(t_half, m, attack_kinds, attack_prm, relative_time,
                         noise, dvec)
            for i in range(k):
                ua[i] = u_cmd[i] + dvec[i]
            if ua[n] < 0.0:
                ua[n] = 0.0
            if ua[n] > 1.0:
                ua[n] = 1.0
            for i in range(dim):
                xs[i] = x[i] + 0.5 * h * k1[i]
            circuit_field(xs, ua, n, C, L, R, C_b, L_f, C_l, R_l, r_l, k2)
            for i in range(dim):
                xs[i] = x[i] + 0.5 * h * k2[i]
            circuit_field(xs, ua, n, C, L, R, C_b, L_f, C_l, R_l, r_l, k3)

            t_full = t + h
            delta_vector(t_full, m, attack_kinds, attack_prm, relative_time,
                         noise, dvec)
            for i in range(k):
                ua[i] = u_cmd[i] + dvec[i]
            if ua[n] < 0.0:
                ua[n] = 0.0
            if ua[n] > 1.0:
                ua[n] = 1.0
            for i in range(dim):
                xs[i] = x[i] + h * k3[i]
            circuit_field(xs, ua, n, C, L, R, C_b, L_f, C_l, R_l, r_l, k4)

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
        # held |b| makes rho-dot constant over the period: exact update
        for i in range(k):
            grown = rho[i] + qgain[i] * abs(b_held[i]) * h_c
            rho[i] = grown if grown < rho_max else rho_max

    if not done:
        t = n_total * h
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
        delta_vector(t, n_macro, attack_kinds, attack_prm, relative_time,
                     noise, dvec)
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
        rec += 1

    return (t_log[:rec], x_log[:rec], u_log[:rec], delta_log[:rec],
            applied_log[:rec], V_log[:rec], H_log[:rec], rho_log[:rec],
            feas_log[:rec], act_log[:rec], diverged, t_div)
