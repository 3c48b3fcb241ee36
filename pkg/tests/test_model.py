"""Network model tests: packing, vector fields, energy, structure blocks."""

import numpy as np
import pytest

from dcgrid import (
    GridState,
    MicrogridParams,
    build_ph,
    check_port_cancellation,
    circuit_vector_field,
    closed_loop_damping,
    closed_loop_interconnection,
    hamiltonian,
    pack_inputs,
    pack_state,
    ph_vector_field,
    q_diagonal,
    state_dim,
    table1_params,
)


def random_params(rng, n):
    """Electrically plausible random parameter set with n sources."""
    return MicrogridParams(
        C=rng.uniform(0.1e-3, 1.0e-3, n),
        L=rng.uniform(0.05e-3, 0.5e-3, n),
        R=rng.uniform(5e-3, 50e-3, n),
        C_b=float(rng.uniform(0.1e-3, 1.0e-3)),
        L_f=float(rng.uniform(0.05e-3, 0.5e-3)),
        C_l=float(rng.uniform(0.1e-3, 1.0e-3)),
        R_l=float(rng.uniform(0.5, 5.0)),
        r_l=float(rng.uniform(0.5, 5.0)),
    )


def random_state_inputs(rng, n):
    state = rng.uniform(-50.0, 50.0, 2 * n + 3)
    inputs = np.concatenate([rng.uniform(-20.0, 20.0, n),
                             rng.uniform(0.0, 1.0, 1)])
    return state, inputs


def test_state_dim_counts_two_per_source_plus_three():
    for n in (1, 2, 3, 7):
        assert state_dim(n) == 2 * n + 3, f"state_dim({n}) wrong"


def test_pack_state_interleaves_source_pairs():
    x = pack_state(np.array([24.1, 24.2]), np.array([8.7, 9.2]),
                   24.0, 12.0, 11.9)
    assert x.tolist() == [24.1, 8.7, 24.2, 9.2, 24.0, 12.0, 11.9], (
        f"unexpected packing {x.tolist()}")
    u = pack_inputs(np.array([3.0, 4.0]), 0.25)
    assert u.tolist() == [3.0, 4.0, 0.25], f"unexpected inputs {u.tolist()}"


def test_grid_state_views_match_packing():
    x = pack_state(np.array([24.1, 24.2]), np.array([8.7, 9.2]),
                   24.0, 12.0, 11.9)
    g = GridState(x, 2)
    assert np.array_equal(g.v, [24.1, 24.2])
    assert np.array_equal(g.i_t, [8.7, 9.2])
    assert (g.v_b, g.i_f, g.v_l) == (24.0, 12.0, 11.9)


def test_grid_state_rejects_bad_vectors():
    with pytest.raises(ValueError):
        GridState(np.zeros(6), 2)  # wrong length for 2 sources
    with pytest.raises(ValueError):
        GridState(np.full(7, np.nan), 2)


def test_params_validation():
    good = dict(C=np.array([1e-3]), L=np.array([1e-4]), R=np.array([1e-2]),
                C_b=1e-3, L_f=1e-4, C_l=1e-3, R_l=2.0, r_l=1.0)
    MicrogridParams(**good)  # sanity: this one is accepted
    with pytest.raises(ValueError):
        MicrogridParams(**{**good, "L": np.array([1e-4, 2e-4])})
    with pytest.raises(ValueError):
        MicrogridParams(**{**good, "C": np.array([-1e-3])})
    with pytest.raises(ValueError):
        MicrogridParams(**{**good, "R_l": 0.0})


def test_table1_parameters():
    p = table1_params()
    assert p.n_sources == 2 and p.dim == 7 and p.n_inputs == 3
    assert np.array_equal(p.C, [0.49e-3, 0.57e-3])
    assert np.array_equal(p.L, [0.09e-3, 0.08e-3])
    assert np.array_equal(p.R, [18.78e-3, 17.78e-3])
    assert (p.C_b, p.L_f, p.C_l) == (0.47e-3, 0.16e-3, 0.47e-3)
    assert (p.R_l, p.r_l) == (2.0, 1.0)


def test_q_diagonal_ordering():
    p = table1_params()
    q = q_diagonal(p)
    expect = [p.C[0], p.L[0], p.C[1], p.L[1], p.C_b, p.L_f, p.C_l]
    assert np.array_equal(q, expect), f"q diagonal {q} != {expect}"


def test_circuit_field_hand_values():
    p = MicrogridParams(C=np.array([1e-3]), L=np.array([1e-4]),
                        R=np.array([10e-3]), C_b=0.47e-3, L_f=0.16e-3,
                        C_l=0.47e-3, R_l=2.0, r_l=1.0)
    x = pack_state(np.array([25.0]), np.array([5.0]), 24.0, 12.0, 12.0)
    u = pack_inputs(np.array([8.0]), 0.5)
    f = circuit_vector_field(p, x, u)
    assert np.isclose(f[0], (8.0 - 5.0) / 1e-3), f"dv/dt {f[0]}"
    assert np.isclose(f[1], (25.0 - 0.01 * 5.0 - 24.0) / 1e-4), f"dit/dt {f[1]}"
    assert np.isclose(f[2], (5.0 - 24.0 / 2.0 - 12.0 * 0.5) / 0.47e-3), (
        f"dvb/dt {f[2]}")
    assert f[3] == 0.0, f"filter current should balance, got {f[3]}"
    assert f[4] == 0.0, f"load voltage should balance, got {f[4]}"


def test_filter_current_slew_hand_value():
    # with the bus collapsed to zero the filter inductor sees -v_l alone
    p = table1_params()
    x = pack_state(np.array([24.0, 24.0]), np.array([9.0, 9.0]),
                   0.0, 12.0, 12.0)
    u = pack_inputs(np.array([9.0, 9.0]), 0.5)
    f = circuit_vector_field(p, x, u)
    assert np.isclose(f[5], -75000.0), f"di_f/dt {f[5]} != -75000"


def test_hamiltonian_values():
    p = table1_params()
    ones = np.ones(p.dim)
    manual = 0.5 * float(np.sum(q_diagonal(p)))
    assert np.isclose(hamiltonian(p, ones), manual)
    assert hamiltonian(p, ones, reference=ones) == 0.0
    # a single excited coordinate: H = 0.5 * C_1 * vhat^2
    x = np.zeros(p.dim)
    x[0] = 3.0
    assert np.isclose(hamiltonian(p, x), 0.5 * p.C[0] * 9.0)
    with pytest.raises(ValueError):
        hamiltonian(p, np.zeros(5))


def test_hamiltonian_positive_definite_in_error():
    p = table1_params()
    rng = np.random.default_rng(3)
    ref = rng.uniform(-10, 10, p.dim)
    for _ in range(50):
        x = ref + rng.uniform(-5, 5, p.dim)
        h = hamiltonian(p, x, reference=ref)
        assert h >= 0.0
        if not np.array_equal(x, ref):
            assert h > 0.0


def test_ph_blocks_have_conservative_structure():
    rng = np.random.default_rng(11)
    for n in (1, 2, 4):
        p = random_params(rng, n)
        subs = build_ph(p)
        assert len(subs) == n + 1
        for s in subs[:-1]:
            assert not s.is_load
            assert s.Q.shape == (2, 2) and s.J.shape == (2, 2)
            assert np.allclose(s.J, -s.J.T), "source J must be skew"
            assert np.all(np.diag(s.R_mat) >= 0.0)
            assert np.all(np.diag(s.Q) > 0.0)
        load = subs[-1]
        assert load.is_load
        assert load.Q.shape == (3, 3)
        assert np.allclose(load.J, -load.J.T), "load J must be skew"
        assert np.all(np.diag(load.R_mat) >= 0.0)


def test_ph_load_input_map_tracks_operating_point():
    p = table1_params()
    load = build_ph(p)[-1]
    x_sub = np.array([24.0, 12.0, 11.5])
    g = load.g(x_sub)
    assert np.isclose(g[0], -12.0 / p.C_b)
    assert np.isclose(g[1], 24.0 / p.L_f)
    assert g[2] == 0.0


def test_ph_field_matches_circuit_field():
    rng = np.random.default_rng(7)
    worst = 0.0
    for n in (1, 2, 3, 4):
        p = random_params(rng, n)
        subs = build_ph(p)
        for _ in range(400):
            x, u = random_state_inputs(rng, n)
            f_c = circuit_vector_field(p, x, u)
            f_ph = ph_vector_field(subs, x, u)
            scale = np.maximum(np.abs(f_c), 1.0)
            worst = max(worst, float(np.max(np.abs(f_ph - f_c) / scale)))
    assert worst < 1e-9, f"worst relative field mismatch {worst:.3e}"


def test_port_power_cancels():
    rng = np.random.default_rng(19)
    for n in (1, 2, 5):
        p = random_params(rng, n)
        subs = build_ph(p)
        for _ in range(200):
            x, _ = random_state_inputs(rng, n)
            r = check_port_cancellation(subs, x)
            i_t = x[1:2 * n:2]
            bound = 1e-12 * (1.0 + abs(x[2 * n]) * float(np.sum(np.abs(i_t))))
            assert abs(r) <= bound, f"port residual {r:.3e} above {bound:.3e}"


def test_closed_loop_damping_entries():
    p = table1_params()
    r = closed_loop_damping(p, np.array([1.0, 1.0]), 0.1)
    expect = np.array([
        1.0 / p.C[0] ** 2, p.R[0] / p.L[0] ** 2,
        1.0 / p.C[1] ** 2, p.R[1] / p.L[1] ** 2,
        1.0 / (p.R_l * p.C_b ** 2), 0.1 / p.L_f ** 2,
        1.0 / (p.r_l * p.C_l ** 2),
    ])
    assert np.array_equal(r, expect), "closed-loop damping layout changed"
    assert np.all(r > 0.0)


def test_closed_loop_interconnection_blocks():
    p = table1_params()
    blocks = closed_loop_interconnection(p, 0.5)
    assert [b.shape for b in blocks] == [(2, 2), (2, 2), (3, 3)]
    for b in blocks:
        assert np.allclose(b, -b.T), "closed-loop coupling must be skew"
    for j, b in enumerate(blocks[:-1]):
        assert np.isclose(b[1, 0], 1.0 / (p.L[j] * p.C[j]))
    load = blocks[-1]
    assert np.isclose(load[1, 0], 0.5 / (p.C_b * p.L_f))
    assert np.isclose(load[2, 1], 1.0 / (p.L_f * p.C_l))
    assert load[0, 2] == 0.0
