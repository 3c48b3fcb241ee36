"""Disturbance model tests: shapes, gating, held noise, envelope check."""

import math

import numpy as np
import pytest

from dcgrid import (
    ATTACK_KINDS,
    AttackSpec,
    ChannelAttack,
    envelope_check,
    evaluate_attack,
    evaluate_attack_deterministic,
    noise_table,
)

EXPO_CHANNELS = (
    ChannelAttack(kind="exponential", s=0.15, o=2.0, g=4.0, kappa=0.3,
                  start=10.0, sigma=0.1),
    ChannelAttack(kind="exponential", s=0.15, o=5.0, g=5.0, kappa=0.4,
                  start=12.0, sigma=0.1),
    ChannelAttack(kind="exponential", s=0.1, o=3.0, g=10.0, kappa=0.2,
                  start=14.0, sigma=0.1),
)


def test_kind_catalogue():
    assert ATTACK_KINDS == ("none", "constant", "polynomial", "exponential")


def test_channel_validation():
    with pytest.raises(ValueError):
        ChannelAttack(kind="ramp")
    with pytest.raises(ValueError):
        ChannelAttack(kind="exponential", kappa=-0.1)
    with pytest.raises(ValueError):
        ChannelAttack(kind="constant", c=1.0, sigma=-0.5)
    with pytest.raises(ValueError):
        ChannelAttack(kind="constant", c=1.0, start=-1.0)
    with pytest.raises(ValueError):
        AttackSpec(channels=(ChannelAttack(),), noise_hold=0.0)


def test_silent_before_start():
    spec = AttackSpec(channels=EXPO_CHANNELS, seed=3)
    for t in (0.0, 5.0, 9.999999):
        assert np.array_equal(evaluate_attack(spec, t), np.zeros(3)), (
            f"disturbance leaked before start at t={t}")
    # second channel stays quiet until its own start even though the
    # first one is already running
    d = evaluate_attack_deterministic(spec, 11.0)
    assert d[0] > 0.0 and d[1] == 0.0 and d[2] == 0.0


def test_deterministic_hand_values():
    spec = AttackSpec(channels=EXPO_CHANNELS, seed=0)
    d = evaluate_attack_deterministic(spec, 10.0)
    assert np.isclose(d[0], 0.15 * (2.0 + 4.0)), f"onset value {d[0]}"
    d = evaluate_attack_deterministic(spec, 14.0)
    assert np.isclose(d[2], 0.1 * (3.0 + 10.0)), f"onset value {d[2]}"

    poly = AttackSpec(channels=(
        ChannelAttack(kind="polynomial", p0=1.0, p1=1.0, start=10.0),))
    assert np.isclose(evaluate_attack_deterministic(poly, 20.0)[0], 11.0)

    const = AttackSpec(channels=(
        ChannelAttack(kind="constant", c=0.5, start=10.0),))
    assert evaluate_attack_deterministic(const, 15.0)[0] == 0.5


def test_ramp_time_origin_flag():
    ch = ChannelAttack(kind="polynomial", p0=1.0, p1=2.0, start=10.0)
    relative = AttackSpec(channels=(ch,), relative_time=True)
    absolute = AttackSpec(channels=(ch,), relative_time=False)
    assert np.isclose(evaluate_attack_deterministic(relative, 12.0)[0], 5.0)
    assert np.isclose(evaluate_attack_deterministic(absolute, 12.0)[0], 25.0)


def test_exponential_growth_saturates_instead_of_overflowing():
    ch = ChannelAttack(kind="exponential", s=1.0, o=0.0, g=1.0, kappa=1e6,
                       start=0.0)
    spec = AttackSpec(channels=(ch,))
    val = evaluate_attack_deterministic(spec, 1e9)[0]
    assert math.isfinite(val) and val > 1e300


def test_noise_is_reproducible_and_prefix_stable():
    spec = AttackSpec(channels=EXPO_CHANNELS, seed=12345)
    a = noise_table(spec, 64)
    b = noise_table(spec, 64)
    assert np.array_equal(a, b), "same seed must give the same noise"
    longer = noise_table(spec, 256)
    assert np.array_equal(longer[:64], a), (
        "noise rows must not depend on how many rows were requested")
    other = noise_table(AttackSpec(channels=EXPO_CHANNELS, seed=54321), 64)
    assert not np.array_equal(a, other), "different seeds must differ"


def test_noise_scales_with_sigma_and_skips_inactive_channels():
    mixed = AttackSpec(channels=(
        ChannelAttack(kind="constant", c=1.0, sigma=2.0),
        ChannelAttack(),  # inactive: contributes exactly zero noise
        ChannelAttack(kind="constant", c=1.0, sigma=0.0),
    ), seed=7)
    table = noise_table(mixed, 1000)
    assert np.all(table[:, 1] == 0.0)
    assert np.all(table[:, 2] == 0.0)
    sd = float(np.std(table[:, 0]))
    assert 1.8 < sd < 2.2, f"held noise std {sd} far from sigma=2"


def test_evaluate_attack_matches_noise_table_rows():
    spec = AttackSpec(channels=EXPO_CHANNELS, seed=9, noise_hold=1e-3)
    table = noise_table(spec, 20_001)
    for t in (10.0, 10.0004999, 12.3456, 19.9999):
        m = int(math.floor(t / spec.noise_hold + 1e-9))
        expect = evaluate_attack_deterministic(spec, t).copy()
        for i, ch in enumerate(spec.channels):
            if ch.active and t >= ch.start:
                expect[i] += table[m, i]
        assert np.array_equal(evaluate_attack(spec, t), expect), (
            f"held-noise composition wrong at t={t}")


def test_noise_held_constant_across_one_interval():
    spec = AttackSpec(channels=EXPO_CHANNELS, seed=4, noise_hold=1e-3)
    base = evaluate_attack(spec, 15.0) - evaluate_attack_deterministic(
        spec, 15.0)
    later = evaluate_attack(spec, 15.0009) - evaluate_attack_deterministic(
        spec, 15.0009)
    assert np.array_equal(base, later), "noise must hold within an interval"
    next_hold = evaluate_attack(spec, 15.001) - evaluate_attack_deterministic(
        spec, 15.001)
    assert not np.array_equal(base, next_hold), (
        "noise must refresh on the next interval")


def test_spec_window_properties():
    spec = AttackSpec(channels=EXPO_CHANNELS)
    assert spec.any_active and spec.earliest_start == 10.0
    quiet = AttackSpec(channels=(ChannelAttack(), ChannelAttack()))
    assert not quiet.any_active and quiet.earliest_start is None
    assert spec.without_noise().sigmas().tolist() == [0.0, 0.0, 0.0]


def test_envelope_check_accepts_bounded_disturbance():
    spec = AttackSpec(channels=(
        ChannelAttack(kind="constant", c=0.5, start=2.0),))
    res = envelope_check(spec, horizon=20.0, gamma=1.0, kappa=0.0)
    assert res.passed and res.worst_ratio <= 0.5 + 1e-12


def test_envelope_check_flags_faster_growth():
    spec = AttackSpec(channels=EXPO_CHANNELS)
    # admissible: envelope grows at least as fast as every channel
    ok = envelope_check(spec, horizon=30.0, gamma=2.0, kappa=0.4)
    assert ok.passed, f"worst ratio {ok.worst_ratio} at t={ok.worst_time}"
    # too-slow envelope: the kappa=0.4 channel escapes it
    bad = envelope_check(spec, horizon=30.0, gamma=2.0, kappa=0.1)
    assert not bad.passed
    assert bad.worst_ratio > 1.0 and bad.worst_time > 12.0


def test_envelope_check_validation():
    spec = AttackSpec(channels=EXPO_CHANNELS)
    with pytest.raises(ValueError):
        envelope_check(spec, 10.0, gamma=0.0, kappa=0.1)
    with pytest.raises(ValueError):
        envelope_check(spec, 10.0, gamma=1.0, kappa=-0.1)
