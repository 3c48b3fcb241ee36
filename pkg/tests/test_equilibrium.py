"""Steady-state allocation tests: closed form vs. KKT solve, optimality."""

import numpy as np
import pytest

from dcgrid import (
    MicrogridParams,
    circuit_vector_field,
    solve_opf,
    opf_oracle,
    table1_params,
    total_load_current,
)


def random_params(rng, n):
    return MicrogridParams(
        C=rng.uniform(0.1e-3, 1.0e-3, n),
        L=rng.uniform(0.05e-3, 0.5e-3, n),
        R=rng.uniform(1e-3, 100e-3, n),
        C_b=float(rng.uniform(0.1e-3, 1.0e-3)),
        L_f=float(rng.uniform(0.05e-3, 0.5e-3)),
        C_l=float(rng.uniform(0.1e-3, 1.0e-3)),
        R_l=float(rng.uniform(0.5, 5.0)),
        r_l=float(rng.uniform(0.5, 5.0)),
    )


def test_two_source_bench_values():
    eq = solve_opf(table1_params(), v_b_star=24.0, d_l_star=0.5)
    assert np.allclose(eq.i_t, [8.75382932, 9.24617068], atol=1e-8), (
        f"line currents {eq.i_t}")
    assert np.allclose(eq.v, [24.16439691, 24.16439691], atol=1e-8), (
        f"source voltages {eq.v}")
    assert abs(eq.i_f - 12.0) < 1e-12, f"filter current {eq.i_f}"
    assert abs(eq.v_l - 12.0) < 1e-12, f"load voltage {eq.v_l}"
    assert eq.v_b == 24.0 and eq.d_l == 0.5
    # at steady state every converter passes its line current straight through
    assert np.array_equal(eq.i_s, eq.i_t)
    assert abs(eq.load_current - 18.0) < 1e-12


def test_load_current_hand_value():
    p = table1_params()
    # bus draw 24/2 plus duty-reflected load branch 0.25 * 24 / 1
    assert np.isclose(total_load_current(p, 24.0, 0.5), 18.0)
    assert np.isclose(total_load_current(p, 24.0, 0.5, quadratic_duty=False),
                      24.0)


def test_linear_bus_balance_flag():
    eq = solve_opf(table1_params(), quadratic_duty=False)
    assert abs(eq.load_current - 24.0) < 1e-12
    # same proportional split, scaled to the larger total
    ratio = eq.i_t / solve_opf(table1_params()).i_t
    assert np.allclose(ratio, 24.0 / 18.0)


def test_equal_resistances_share_equally():
    rng = np.random.default_rng(1)
    for n in (2, 3, 5):
        p = random_params(rng, n)
        p = MicrogridParams(C=p.C, L=p.L, R=np.full(n, 10e-3), C_b=p.C_b,
                            L_f=p.L_f, C_l=p.C_l, R_l=p.R_l, r_l=p.r_l)
        eq = solve_opf(p, v_b_star=24.0, d_l_star=0.5)
        assert np.allclose(eq.i_t, eq.i_t[0]), f"unequal split {eq.i_t}"


def test_inverse_resistance_split():
    # conductance-proportional sharing: R = (1, 2, 4) mOhm carries (4, 2, 1) A
    p = MicrogridParams(C=np.full(3, 1e-3), L=np.full(3, 1e-4),
                        R=np.array([1e-3, 2e-3, 4e-3]), C_b=0.47e-3,
                        L_f=0.16e-3, C_l=0.47e-3, R_l=2.0, r_l=1.0)
    eq = solve_opf(p, v_b_star=14.0, d_l_star=0.0)
    assert abs(eq.load_current - 7.0) < 1e-12
    assert np.allclose(eq.i_t, [4.0, 2.0, 1.0]), f"split {eq.i_t}"


def test_matches_kkt_oracle_on_random_sets():
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        p = random_params(rng, n)
        v_b = float(rng.uniform(10.0, 48.0))
        d = float(rng.uniform(0.0, 1.0))
        closed = solve_opf(p, v_b, d).i_t
        kkt = opf_oracle(p, v_b, d)
        worst = max(worst, float(np.max(np.abs(closed - kkt))))
    assert worst < 1e-8, f"closed form vs KKT worst gap {worst:.3e}"


def test_allocation_minimizes_conduction_loss():
    rng = np.random.default_rng(5)
    p = random_params(rng, 4)
    eq = solve_opf(p, v_b_star=24.0, d_l_star=0.4)
    base = float(np.sum(p.R * eq.i_t ** 2))
    for _ in range(1000):
        shift = rng.normal(size=4)
        shift -= shift.mean()  # keep the total current delivered fixed
        trial = eq.i_t + 0.5 * shift
        loss = float(np.sum(p.R * trial ** 2))
        assert loss >= base - 1e-12, (
            f"found cheaper split: {loss} < {base}")


def test_equal_marginal_loss_identity():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        p = random_params(rng, n)
        eq = solve_opf(p, v_b_star=30.0, d_l_star=0.7)
        marginal = p.R * eq.i_t
        assert np.allclose(marginal, marginal[0]), (
            f"marginal losses differ: {marginal}")


def test_circuit_field_vanishes_at_steady_state():
    rng = np.random.default_rng(31)
    for _ in range(20):
        n = int(rng.integers(1, 5))
        p = random_params(rng, n)
        eq = solve_opf(p, float(rng.uniform(12, 48)), float(rng.uniform(0, 1)))
        f = circuit_vector_field(p, eq.state, eq.inputs)
        assert np.max(np.abs(f)) < 1e-8, (
            f"field at steady state {np.max(np.abs(f)):.3e}")


def test_target_validation():
    p = table1_params()
    with pytest.raises(ValueError):
        solve_opf(p, v_b_star=-1.0)
    with pytest.raises(ValueError):
        solve_opf(p, d_l_star=1.5)
    with pytest.raises(ValueError):
        solve_opf(p, d_l_star=-0.1)
