"""5G NR air interface: SSB/PBCH broadcast, SFN counter and timing advance.

All timing-advance arithmetic is carried out with exact rationals in units of
the physical-layer time unit Tc and rounded to picoseconds only at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .simcore import PS_PER_MS, PS_PER_S, Scheduler

SPEED_OF_LIGHT = 299_792_458  # m/s
# the rounded value of c behind the tabulated step distances
SPEED_OF_LIGHT_NOMINAL = 300_000_000

DELTA_F_MAX_HZ = 480_000
N_F = 4096
TC_PS = Fraction(PS_PER_S, DELTA_F_MAX_HZ * N_F)

SFN_MODULUS = 1024
SFN_TICK_PS = 10 * PS_PER_MS
HALF_FRAME_PS = 5 * PS_PER_MS
SFN_PERIOD_PS = SFN_MODULUS * SFN_TICK_PS

RAR_TAC_MAX = 3846
MACCE_TAC_MAX = 63
MACCE_TAC_ZERO = 31

DEFAULT_T_OFF_PS = 13 * 1_000_000


def tc_picoseconds() -> tuple[Fraction, int]:
    """Tc as an exact rational number of picoseconds and its ps rounding."""
    return TC_PS, round(TC_PS)


def tc_to_ps(n_tc: Union[int, Fraction]) -> int:
    return round(n_tc * TC_PS)


@dataclass(frozen=True)
class Numerology:
    mu: int = 1

    def __post_init__(self):
        if self.mu not in (0, 1, 2, 3):
            raise ValueError(f"numerology mu must be in 0..3, got {self.mu}")

    @property
    def scs_khz(self) -> int:
        return 15 * 2 ** self.mu

    @property
    def step_tc(self) -> int:
        """One TA adjustment step (16 * 64 / 2^mu) in units of Tc."""
        return 16 * 64 // 2 ** self.mu


def _mu(mu: Union[int, Numerology]) -> Numerology:
    return mu if isinstance(mu, Numerology) else Numerology(int(mu))


def step_size_ps(mu: Union[int, Numerology]) -> Fraction:
    return _mu(mu).step_tc * TC_PS


def step_distance_m(mu: Union[int, Numerology], c: float = SPEED_OF_LIGHT_NOMINAL) -> float:
    """Distance a UE moves before its TA changes by one step.

    One step covers a round trip, hence the factor 1/2. The published table
    uses c = 3e8 m/s; pass ``c=SPEED_OF_LIGHT`` for the exact figure.
    """
    return float(step_size_ps(mu) / PS_PER_S * Fraction(c) / 2)


def sfn_at(true_time: int) -> int:
    if true_time < 0:
        raise ValueError("true_time must be non-negative")
    return (true_time // SFN_TICK_PS) % SFN_MODULUS


def half_frame_at(true_time: int) -> int:
    return (true_time // HALF_FRAME_PS) % 2


def propagation_delay(distance: float) -> int:
    """Line-of-sight delay for ``distance`` metres, rounded to the nearest ps."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    return round(Fraction(str(distance)) * PS_PER_S / SPEED_OF_LIGHT)


def ta_from_rar(n_tac_rar: int, mu: Union[int, Numerology]) -> int:
    """N_TA from the 12-bit random-access-response TAC index."""
    if not 0 <= n_tac_rar <= RAR_TAC_MAX:
        raise ValueError(f"RAR TAC index must lie in [0, {RAR_TAC_MAX}], got {n_tac_rar}")
    return n_tac_rar * _mu(mu).step_tc


def ta_update_macce(n_ta_old: int, n_tac_mac: int, mu: Union[int, Numerology]) -> int:
    """N_TA after a 6-bit MAC CE TAC update; index 31 leaves it unchanged."""
    if not 0 <= n_tac_mac <= MACCE_TAC_MAX:
        raise ValueError(f"MAC CE TAC index must lie in [0, {MACCE_TAC_MAX}], got {n_tac_mac}")
    return max(0, n_ta_old + (n_tac_mac - MACCE_TAC_ZERO) * _mu(mu).step_tc)


class TacMeasurement(NamedTuple):
    index: int
    saturated: bool


def _nearest_step(x: Fraction) -> int:
    # ties go to the smaller index
    return math.ceil(x - Fraction(1, 2))


def gnb_measure_tac(t_prop: int, mu: Union[int, Numerology], mode: str = "rar",
                    n_ta_current: int = 0) -> TacMeasurement:
    """TAC index whose resulting N_TA * Tc best approximates the round trip ``2 * t_prop``.

    The gNB is idealized: it knows the propagation delay exactly, so only the
    quantization to whole adjustment steps remains.
    """
    if t_prop < 0:
        raise ValueError("t_prop must be non-negative")
    numerology = _mu(mu)
    step = numerology.step_tc * TC_PS
    if mode == "rar":
        idx = _nearest_step(Fraction(2 * t_prop) / step)
        lo, hi = 0, RAR_TAC_MAX
    elif mode == "macce":
        residual = Fraction(2 * t_prop) - n_ta_current * TC_PS
        idx = MACCE_TAC_ZERO + _nearest_step(residual / step)
        lo, hi = 0, MACCE_TAC_MAX
    else:
        raise ValueError(f"mode must be 'rar' or 'macce', got {mode!r}")
    clamped = min(max(idx, lo), hi)
    return TacMeasurement(clamped, clamped != idx)


def n_ta_offset_from_ps(t_off_ps: int) -> int:
    """N_TA,offset (in Tc) nearest to a duplex switch offset given in ps."""
    return round(Fraction(t_off_ps) / TC_PS)


@dataclass
class TimingAdvanceState:
    n_ta: int = 0
    n_ta_off: int = 0

    def __post_init__(self):
        if self.n_ta < 0:
            raise ValueError("n_ta must be non-negative")

    @property
    def t_ta(self) -> int:
        return tc_to_ps(self.n_ta + self.n_ta_off)

    @property
    def t_ta_exact(self) -> Fraction:
        return (self.n_ta + self.n_ta_off) * TC_PS


def runtime_difference(n_ta_ref: int, ta_local: TimingAdvanceState) -> Fraction:
    """Exact ``T_TA^R - T_TA^S`` in ps. The common N_TA,offset cancels."""
    return (n_ta_ref - ta_local.n_ta) * TC_PS


@dataclass(frozen=True)
class PbchBroadcast:
    sfn: int
    half_frame: int
    mu: int
    emitted_at: int
    # ground-truth broadcast counter for test harnesses; protocol code never reads it
    index: int = -1


class DistanceProfile:
    """Piecewise-constant UE-to-gNB distance: ``[(t_ps, metres), ...]``."""

    def __init__(self, spec: Union[float, Sequence[tuple[int, float]]]):
        if isinstance(spec, (int, float)):
            steps = [(0, float(spec))]
        else:
            steps = sorted((int(t), float(d)) for t, d in spec)
            if not steps or steps[0][0] != 0:
                steps.insert(0, (0, steps[0][1] if steps else 0.0))
        for _, d in steps:
            if d < 0:
                raise ValueError("distances must be non-negative")
        self.steps = steps

    def at(self, t: int) -> float:
        current = self.steps[0][1]
        for start, d in self.steps:
            if start > t:
                break
            current = d
        return current


@dataclass
class GnbConfig:
    ssb_period_ms: int = 20
    numerology: Numerology = field(default_factory=Numerology)
    t_off_ps: int = DEFAULT_T_OFF_PS
    toa_jitter_sigma_ps: float = 0.0
    ta_update_interval_ms: int = 1000

    def __post_init__(self):
        if not 5 <= self.ssb_period_ms <= 160 or self.ssb_period_ms % 5:
            raise ValueError(
                f"ssb_period_ms must be a multiple of 5 in [5, 160], got {self.ssb_period_ms}")
        if self.t_off_ps < 0:
            raise ValueError("t_off_ps must be non-negative")
        if self.ta_update_interval_ms <= 0:
            raise ValueError("ta_update_interval_ms must be positive")

    @property
    def ssb_period_ps(self) -> int:
        return self.ssb_period_ms * PS_PER_MS

    @property
    def n_ta_off(self) -> int:
        return n_ta_offset_from_ps(self.t_off_ps)


@dataclass
class AttachedUe:
    name: str
    distance: DistanceProfile
    on_pbch: Callable[[PbchBroadcast, int], None]
    ta: TimingAdvanceState
    rng: Optional[np.random.Generator] = None
    tac_saturations: int = 0


class Gnb:
    """Cyclic SSB/PBCH broadcaster plus the idealized TA control loop."""

    def __init__(self, config: GnbConfig, scheduler: Scheduler):
        self.config = config
        self.scheduler = scheduler
        self.ues: list[AttachedUe] = []
        self.broadcasts = 0

    def attach(self, name: str, distance: DistanceProfile,
               on_pbch: Callable[[PbchBroadcast, int], None],
               rng: Optional[np.random.Generator] = None) -> AttachedUe:
        """Attach a UE and run its random-access TA acquisition."""
        ue = AttachedUe(name, distance, on_pbch,
                        TimingAdvanceState(0, self.config.n_ta_off), rng)
        now = self.scheduler.now
        tac = gnb_measure_tac(propagation_delay(distance.at(now)), self.config.numerology, "rar")
        ue.tac_saturations += tac.saturated
        ue.ta.n_ta = ta_from_rar(tac.index, self.config.numerology)
        self.ues.append(ue)
        return ue

    def start(self, at: int = 0) -> None:
        period = self.config.ssb_period_ps
        first = -(-at // period) * period
        self.scheduler.schedule(first, "gnb", "ssb", self._on_ssb)
        interval = self.config.ta_update_interval_ms * PS_PER_MS
        self.scheduler.schedule(at + interval, "gnb", "ta_update", self._on_ta_update)

    def _on_ssb(self, event) -> None:
        self.broadcast_pbch(event.fire_at)
        self.scheduler.schedule_in(self.config.ssb_period_ps, "gnb", "ssb", self._on_ssb)

    def _on_ta_update(self, event) -> None:
        self.update_timing_advance(event.fire_at)
        interval = self.config.ta_update_interval_ms * PS_PER_MS
        self.scheduler.schedule_in(interval, "gnb", "ta_update", self._on_ta_update)

    def broadcast_pbch(self, now: int) -> PbchBroadcast:
        """Emit one PBCH and schedule its reception at every attached UE."""
        if now % self.config.ssb_period_ps:
            raise ValueError("PBCH emission must lie on the SSB period grid")
        pbch = PbchBroadcast(sfn_at(now), half_frame_at(now), self.config.numerology.mu,
                             now, self.broadcasts)
        self.broadcasts += 1
        sigma = self.config.toa_jitter_sigma_ps
        for ue in self.ues:
            delay = propagation_delay(ue.distance.at(now))
            if sigma > 0:
                delay = max(0, delay + int(round(ue.rng.normal(0.0, sigma))))
            self.scheduler.schedule(now + delay, ue.name, pbch, _deliver(ue, pbch))
        return pbch

    def update_timing_advance(self, now: int) -> None:
        """Send each UE a MAC CE TAC reflecting its current distance."""
        mu = self.config.numerology
        for ue in self.ues:
            t_prop = propagation_delay(ue.distance.at(now))
            tac = gnb_measure_tac(t_prop, mu, "macce", ue.ta.n_ta)
            ue.tac_saturations += tac.saturated
            ue.ta.n_ta = ta_update_macce(ue.ta.n_ta, tac.index, mu)


def _deliver(ue: AttachedUe, pbch: PbchBroadcast):
    def callback(event):
        ue.on_pbch(pbch, event.fire_at)
    return callback
