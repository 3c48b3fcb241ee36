"""Injected input disturbances.

Each control channel (one per source converter plus the load duty
channel) carries an additive disturbance delta_i(t) that switches on at
its own start time and follows one of four shapes: none, constant bias,
linear ramp, or growing exponential.  On top of the deterministic shape
an optional Gaussian term of per-channel standard deviation sigma is
drawn once per hold interval and held constant across it, which keeps
the disturbed ODE well-posed while still exercising the controller with
broadband noise.

Randomness is counter-based: the whole noise sequence is a function of
(seed, hold index, channel), so evaluation is reproducible at any time
point without storing generator state, and parallel runs of different
scenarios never share streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import Generator, Philox

__all__ = [
    "ChannelAttack",
    "AttackSpec",
    "EnvelopeResult",
    "evaluate_attack",
    "evaluate_attack_deterministic",
    "noise_table",
    "envelope_check",
    "ATTACK_KINDS",
]

ATTACK_KINDS = ("none", "constant", "polynomial", "exponential")
# integer codes used by the compiled simulation core
KIND_CODES = {name: i for i, name in enumerate(ATTACK_KINDS)}


@dataclass(frozen=True)
class ChannelAttack:
    """Disturbance shape for one input channel.

    kind "constant":     delta = c                      for t >= start
    kind "polynomial":   delta = p0 + p1 * tau          for t >= start
    kind "exponential":  delta = s*(o + g*exp(kappa*(t - start)))
    kind "none":         delta = 0 always (sigma ignored)

    tau is time since start by default; see AttackSpec.relative_time.
    sigma adds zero-mean Gaussian noise (also gated by start).
    """

    kind: str = "none"
    c: float = 0.0
    p0: float = 0.0
    p1: float = 0.0
    s: float = 0.0
    o: float = 0.0
    g: float = 0.0
    kappa: float = 0.0
    start: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(
                f"unknown attack kind {self.kind!r}; expected one of "
                f"{ATTACK_KINDS}")
        if self.kappa < 0.0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.start < 0.0:
            raise ValueError(f"start must be >= 0, got {self.start}")

    @property
    def active(self) -> bool:
        return self.kind != "none"


@dataclass(frozen=True)
class AttackSpec:
    """Per-channel disturbance definitions plus the shared noise stream.

    channels: one ChannelAttack per input channel, sources first, load
    duty last.  relative_time chooses the ramp argument tau: time since
    the channel's start (default) or absolute simulation time.
    noise_hold is the length of the hold interval for the Gaussian
    term [s].
    """

    channels: tuple[ChannelAttack, ...] = field(default_factory=tuple)
    seed: int = 0
    relative_time: bool = True
    noise_hold: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.noise_hold <= 0.0:
            raise ValueError(f"noise_hold must be > 0, got {self.noise_hold}")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def any_active(self) -> bool:
        return any(ch.active for ch in self.channels)

    @property
    def earliest_start(self) -> float | None:
        starts = [ch.start for ch in self.channels if ch.active]
        return min(starts) if starts else None

    def without_noise(self) -> "AttackSpec":
        return replace(self, channels=tuple(
            replace(ch, sigma=0.0) for ch in self.channels))

    def kind_codes(self) -> np.ndarray:
        return np.array([KIND_CODES[ch.kind] for ch in self.channels],
                        dtype=np.int64)

    def param_matrix(self) -> np.ndarray:
        """Channel parameters as a dense matrix for the compiled core.

        Row layout: [c, p0, p1, s, o, g, kappa, start].
        """
        rows = [(ch.c, ch.p0, ch.p1, ch.s, ch.o, ch.g, ch.kappa, ch.start)
                for ch in self.channels]
        return np.array(rows, dtype=float).reshape(self.n_channels, 8)

    def sigmas(self) -> np.ndarray:
        return np.array(
            [ch.sigma if ch.active else 0.0 for ch in self.channels])


def _deterministic_value(ch: ChannelAttack, t: float,
                         relative_time: bool) -> float:
    if not ch.active or t < ch.start:
        return 0.0
    if ch.kind == "constant":
        return ch.c
    if ch.kind == "polynomial":
        tau = (t - ch.start) if relative_time else t
        return ch.p0 + ch.p1 * tau
    # cap the exponent so extreme configurations saturate near 1e304
    # instead of overflowing; any simulation is flagged divergent long
    # before the cap can matter
    arg = min(ch.kappa * (t - ch.start), 700.0)
    return ch.s * (ch.o + ch.g * math.exp(arg))


def evaluate_attack_deterministic(spec: AttackSpec, t: float) -> np.ndarray:
    """Noise-free disturbance vector at time t."""
    return np.array([_deterministic_value(ch, t, spec.relative_time)
                     for ch in spec.channels])


def noise_table(spec: AttackSpec, n_holds: int) -> np.ndarray:
    """Held Gaussian noise for hold intervals 0..n_holds-1.

    Row m is the noise vector applied throughout
    [m*noise_hold, (m+1)*noise_hold).  The table is one contiguous
    standard-normal stream from a Philox generator keyed by the seed,
    reshaped to (n_holds, n_channels) and scaled per channel, so the
    value of row m never depends on how many rows were requested.
    """
    k = spec.n_channels
    gen = Generator(Philox(key=np.array([spec.seed, 0], dtype=np.uint64)))
    table = gen.standard_normal(n_holds * k).reshape(n_holds, k)
    return table * spec.sigmas()[np.newaxis, :]


def _hold_index(spec: AttackSpec, t: float) -> int:
    # nudge absorbs float error in t when t sits on a hold boundary
    return int(math.floor(t / spec.noise_hold + 1e-9))


def evaluate_attack(spec: AttackSpec, t: float) -> np.ndarray:
    """Disturbance vector at time t, including held noise.

    Deterministic given (spec, seed): the noise value is indexed by the
    hold interval containing t, not by call order.
    """
    delta = evaluate_attack_deterministic(spec, t)
    if np.any(spec.sigmas() > 0.0):
        m = _hold_index(spec, t)
        row = noise_table(spec, m + 1)[m]
        for i, ch in enumerate(spec.channels):
            if ch.active and t >= ch.start:
                delta[i] += row[i]
    return delta


@dataclass(frozen=True)
class EnvelopeResult:
    passed: bool
    worst_ratio: float
    worst_time: float


def envelope_check(spec: AttackSpec, horizon: float, gamma: float,
                   kappa: float, n_samples: int = 1000) -> EnvelopeResult:
    """Check the noise-free disturbance against gamma * exp(kappa*t).

    Samples ||delta(t)|| (Euclidean norm over channels) at n_samples
    uniformly spaced times in [0, horizon] and reports the worst ratio
    ||delta|| / (gamma*exp(kappa*t)); passed means every ratio <= 1.
    """
    if gamma <= 0.0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if kappa < 0.0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    times = np.linspace(0.0, horizon, n_samples)
    worst_ratio = 0.0
    worst_time = 0.0
    for t in times:
        norm = float(np.linalg.norm(evaluate_attack_deterministic(spec, t)))
        ratio = norm / (gamma * math.exp(kappa * t))
        if ratio > worst_ratio:
            worst_ratio = ratio
            worst_time = float(t)
    return EnvelopeResult(passed=worst_ratio <= 1.0,
                          worst_ratio=worst_ratio, worst_time=worst_time)
