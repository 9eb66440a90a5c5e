"""Reference broadcast infrastructure synchronization over the 5G PBCH.

The master UE timestamps every PBCH it receives and forwards
``(SFN, t_ref, N_TA)`` to the slaves. A slave pairs each follow-up with its own
reception timestamp of the same broadcast and steps its clock by the
difference, optionally corrected by the timing-advance runtime term.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .air import (SFN_MODULUS, SFN_PERIOD_PS, PbchBroadcast, TimingAdvanceState,
                  runtime_difference)
from .analysis import OffsetTrace
from .clocks import ClockState, TimestampModel, read_clock, step_clock, true_offset
from .simcore import PS_PER_MS, Scheduler

logger = logging.getLogger(__name__)

CORRECTION_MODES = {"none": Fraction(0), "paper_full": Fraction(1), "half": Fraction(1, 2)}
INIT_RULES = ("prose", "literal", "off")
INIT_LIMIT_PS = SFN_PERIOD_PS // 2  # 5.12 s
HISTORY_CAPACITY = 2048


class MatchFailure(LookupError):
    """No local observation pairs with the follow-up's broadcast."""


@dataclass(frozen=True)
class InitMsg:
    t0_ref: int
    n_ta_ref: int = 0


@dataclass(frozen=True)
class FollowUpMsg:
    sfn_ref: int
    t_ref: int
    n_ta_ref: int
    half_frame: int = 0
    # ground truth for harness checks only
    index: int = -1


@dataclass
class ObservationPair:
    sfn: int
    t_local: int
    half_frame: int = 0
    index: int = -1


@dataclass(frozen=True)
class Correction:
    raw: int
    runtime_exact: Fraction
    applied: int

    @property
    def runtime_term(self) -> int:
        return round(self.runtime_exact)


@dataclass
class MasterState:
    ta: TimingAdvanceState
    followups_sent: int = 0


@dataclass
class SlaveState:
    ssb_period_ms: int = 20
    correction_mode: str = "paper_full"
    init_rule: str = "prose"
    lag_i: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAPACITY))
    last_correction: int = 0
    match_failures: int = 0
    initialized: bool = False
    init_branch: Optional[str] = None
    _lag_pos: int = 0
    # sum of steps since startup; history stamps are stored net of it
    _shift: int = 0

    def __post_init__(self):
        if self.correction_mode not in CORRECTION_MODES:
            raise ValueError(f"correction_mode must be one of {sorted(CORRECTION_MODES)}")
        if self.init_rule not in INIT_RULES:
            raise ValueError(f"init_rule must be one of {INIT_RULES}")


def master_on_startup(state: MasterState, clock: ClockState, true_time: int,
                      ts_model: TimestampModel = TimestampModel(),
                      rng: Optional[np.random.Generator] = None) -> InitMsg:
    return InitMsg(read_clock(clock, ts_model, true_time, rng), state.ta.n_ta)


def master_on_pbch(state: MasterState, pbch: PbchBroadcast, clock: ClockState, true_time: int,
                   ts_model: TimestampModel = TimestampModel(),
                   rng: Optional[np.random.Generator] = None) -> FollowUpMsg:
    """Timestamp a PBCH reception and package the follow-up for the slaves."""
    t_ref = read_clock(clock, ts_model, true_time, rng)
    state.followups_sent += 1
    return FollowUpMsg(pbch.sfn, t_ref, state.ta.n_ta, pbch.half_frame, pbch.index)


def slave_observe_pbch(state: SlaveState, pbch: PbchBroadcast, clock: ClockState,
                       true_time: int, ts_model: TimestampModel = TimestampModel(),
                       rng: Optional[np.random.Generator] = None) -> ObservationPair:
    pair = ObservationPair(pbch.sfn, read_clock(clock, ts_model, true_time, rng),
                           pbch.half_frame, pbch.index)
    state.history.append(ObservationPair(pair.sfn, pair.t_local - state._shift,
                                         pair.half_frame, pair.index))
    return pair


def slave_on_init(state: SlaveState, msg: InitMsg, clock: ClockState, true_time: int,
                  ts_model: TimestampModel = TimestampModel(),
                  rng: Optional[np.random.Generator] = None) -> SlaveState:
    """Coarse alignment so that SFN pairing stays unambiguous.

    Under the default ``prose`` rule the clock is stepped to the master's
    startup stamp only when the two differ by more than 5.12 s. ``literal``
    steps when within the limit instead; ``off`` never steps.
    """
    t0_local = read_clock(clock, ts_model, true_time, rng)
    diff = msg.t0_ref - t0_local
    within = abs(diff) <= INIT_LIMIT_PS
    step = {"prose": not within, "literal": within, "off": False}[state.init_rule]
    if step:
        _step(state, clock, diff, true_time)
    state.init_branch = ("coarse" if step else "none") + ("-within" if within else "-outside")
    state.initialized = True
    return state


def _same_broadcast(pair: ObservationPair, follow_up: FollowUpMsg, shift: int) -> bool:
    return (pair.sfn == follow_up.sfn_ref and pair.half_frame == follow_up.half_frame
            and abs(follow_up.t_ref - pair.t_local - shift) <= INIT_LIMIT_PS)


def _current(pair: ObservationPair, shift: int) -> ObservationPair:
    return ObservationPair(pair.sfn, pair.t_local + shift, pair.half_frame, pair.index)


def _signed_sfn(diff: int) -> int:
    diff %= SFN_MODULUS
    return diff - SFN_MODULUS if diff > SFN_MODULUS // 2 else diff


def slave_match_sfn(state: SlaveState, follow_up: FollowUpMsg) -> ObservationPair:
    """Find the local pair recorded for the same PBCH as ``follow_up``.

    The lag found last time is tried first. Otherwise the history is walked
    backwards one broadcast at a time, i.e. ``ssb_period / 10 ms`` SFN ticks
    per step modulo 1024, over at most one SFN period. Of the repeating SFN
    values, only the one whose local stamp lies within 5.12 s of the
    reference stamp is accepted.
    """
    history = state.history
    if not history:
        raise MatchFailure("no local PBCH observations yet")
    n = len(history)
    latest = history[-1]
    shift = state._shift
    if state._lag_pos < n and _same_broadcast(history[n - 1 - state._lag_pos], follow_up, shift):
        return _current(history[n - 1 - state._lag_pos], shift)
    ticks_per_step = state.ssb_period_ms / 10
    max_steps = min(n, int(SFN_MODULUS / ticks_per_step) + 1)
    for pos in range(max_steps):
        pair = history[n - 1 - pos]
        if _same_broadcast(pair, follow_up, shift):
            state._lag_pos = pos
            state.lag_i = _signed_sfn(latest.sfn - pair.sfn)
            return _current(pair, shift)
    state.match_failures += 1
    raise MatchFailure(f"no local pair for SFN {follow_up.sfn_ref} within one SFN period")


def correction_delta(raw: int, runtime_exact: Fraction, mode: str) -> int:
    return raw - round(CORRECTION_MODES[mode] * runtime_exact)


def slave_apply_correction(state: SlaveState, pair_local: ObservationPair,
                           follow_up: FollowUpMsg, ta_local: TimingAdvanceState,
                           clock: ClockState, at: int) -> Correction:
    """Step the slave clock by ``t_ref - t_local - k * (T_TA^R - T_TA^S)``.

    ``k`` is 0, 1 or 1/2 for the ``none``, ``paper_full`` and ``half`` modes.
    """
    raw = follow_up.t_ref - pair_local.t_local
    runtime = runtime_difference(follow_up.n_ta_ref, ta_local)
    applied = correction_delta(raw, runtime, state.correction_mode)
    _step(state, clock, applied, at)
    state.last_correction = applied
    return Correction(raw, runtime, applied)


def _step(state: SlaveState, clock: ClockState, delta: int, at: int) -> None:
    step_clock(clock, delta, at)
    # stored stamps move with the clock so a later match is not double counted
    state._shift += delta


class SideChannel:
    """Reliable in-order delivery with a uniform random delay."""

    def __init__(self, scheduler: Scheduler, rng: np.random.Generator,
                 delay_min_ps: int = 1 * PS_PER_MS, delay_max_ps: int = 5 * PS_PER_MS):
        if not 0 <= delay_min_ps <= delay_max_ps:
            raise ValueError("side channel needs 0 <= delay_min <= delay_max")
        self.scheduler = scheduler
        self.rng = rng
        self.delay_min_ps = delay_min_ps
        self.delay_max_ps = delay_max_ps
        self._last: dict[str, int] = {}
        self.delivered = 0

    def send(self, dest: str, msg, handler: Callable[[object, int], None]) -> int:
        delay = int(self.rng.integers(self.delay_min_ps, self.delay_max_ps, endpoint=True))
        # serial link: a message never overtakes or coincides with the previous one
        at = max(self.scheduler.now + delay, self._last.get(dest, -1) + 1)
        self._last[dest] = at

        def deliver(event):
            self.delivered += 1
            handler(msg, event.fire_at)

        self.scheduler.schedule(at, dest, msg, deliver)
        return at


@dataclass
class SyncRecord:
    round: int
    true_time_ps: int
    sfn: int
    raw_delta_ps: int
    runtime_term_ps: int
    applied_delta_ps: int
    true_offset_after_ps: int
    match_failures: int


class MasterUe:
    def __init__(self, name: str, clock: ClockState, ts_model: TimestampModel,
                 rng: np.random.Generator, channel: SideChannel):
        self.name = name
        self.clock = clock
        self.ts_model = ts_model
        self.rng = rng
        self.channel = channel
        self.state: Optional[MasterState] = None
        self.slaves: list[SlaveUe] = []

    def attach(self, ta: TimingAdvanceState) -> None:
        self.state = MasterState(ta)

    def start(self, now: int) -> InitMsg:
        msg = master_on_startup(self.state, self.clock, now, self.ts_model, self.rng)
        for slave in self.slaves:
            self.channel.send(slave.name, msg, slave.on_init)
        return msg

    def on_pbch(self, pbch: PbchBroadcast, now: int) -> None:
        msg = master_on_pbch(self.state, pbch, self.clock, now, self.ts_model, self.rng)
        for slave in self.slaves:
            self.channel.send(slave.name, msg, slave.on_follow_up)


class SlaveUe:
    def __init__(self, name: str, clock: ClockState, ts_model: TimestampModel,
                 rng: np.random.Generator, state: SlaveState, master: MasterUe,
                 on_corrected: Optional[Callable[["SlaveUe", SyncRecord], None]] = None):
        self.name = name
        self.clock = clock
        self.ts_model = ts_model
        self.rng = rng
        self.state = state
        self.master = master
        self.ta: Optional[TimingAdvanceState] = None
        self.on_corrected = on_corrected
        self.records: list[SyncRecord] = []
        self.mispairings = 0

    def attach(self, ta: TimingAdvanceState) -> None:
        self.ta = ta

    def on_pbch(self, pbch: PbchBroadcast, now: int) -> None:
        slave_observe_pbch(self.state, pbch, self.clock, now, self.ts_model, self.rng)

    def on_init(self, msg: InitMsg, now: int) -> None:
        slave_on_init(self.state, msg, self.clock, now, self.ts_model, self.rng)
        logger.debug("%s init branch %s", self.name, self.state.init_branch)

    def on_follow_up(self, msg: FollowUpMsg, now: int) -> None:
        if not self.state.initialized:
            return
        try:
            pair = slave_match_sfn(self.state, msg)
        except MatchFailure as exc:
            logger.debug("%s: %s", self.name, exc)
            return
        if pair.index != msg.index:
            self.mispairings += 1
        corr = slave_apply_correction(self.state, pair, msg, self.ta, self.clock, now)
        record = SyncRecord(
            round=len(self.records),
            true_time_ps=now,
            sfn=msg.sfn_ref,
            raw_delta_ps=corr.raw,
            runtime_term_ps=corr.runtime_term,
            applied_delta_ps=corr.applied,
            true_offset_after_ps=self.master.clock.ideal(now) - self.clock.ideal(now),
            match_failures=self.state.match_failures,
        )
        self.records.append(record)
        if self.on_corrected is not None:
            self.on_corrected(self, record)


def record_offset_sample(trace: OffsetTrace, master_clock: ClockState, slave_clock: ClockState,
                         true_time: int) -> int:
    """Append the ground-truth master-minus-slave offset at ``true_time``."""
    offset = true_offset(master_clock, slave_clock, true_time)
    trace.append(true_time, offset)
    return offset
