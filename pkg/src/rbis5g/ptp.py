"""Two-way PTP (IEEE 1588 end-to-end) baseline over an asymmetric, jittery link."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .analysis import OffsetTrace
from .clocks import ClockState, TimestampModel, read_clock, step_clock, true_offset
from .simcore import PS_PER_MS, PS_PER_US, Scheduler

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PtpExchange:
    """SYNC sent (t1, master) / received (t2, slave); DELAY_REQ sent (t3, slave) / received (t4, master)."""

    t1: int
    t2: int
    t3: int
    t4: int


def ptp_delay(x: PtpExchange) -> Fraction:
    """Mean path delay ``((t2 - t1) + (t4 - t3)) / 2``."""
    delay = Fraction((x.t2 - x.t1) + (x.t4 - x.t3), 2)
    if delay < 0:
        logger.warning("negative path delay %s ps: asymmetry exceeds the physical delay", delay)
    return delay


def ptp_offset(x: PtpExchange) -> Fraction:
    """Slave-minus-master offset ``((t2 - t1) - (t4 - t3)) / 2``."""
    return Fraction((x.t2 - x.t1) - (x.t4 - x.t3), 2)


@dataclass(frozen=True)
class LinkModel:
    """One-way delays in ps; jitter is Gaussian and delays are floored at zero."""

    down_delay_ps: int = 1 * PS_PER_MS
    up_delay_ps: int = 1 * PS_PER_MS
    down_jitter_ps: float = 0.0
    up_jitter_ps: float = 0.0
    turnaround_ps: int = 100 * PS_PER_US

    def _draw(self, mean: int, sigma: float, rng: Optional[np.random.Generator]) -> int:
        if sigma <= 0:
            return mean
        return max(0, mean + int(round(rng.normal(0.0, sigma))))

    def down(self, rng: Optional[np.random.Generator] = None) -> int:
        return self._draw(self.down_delay_ps, self.down_jitter_ps, rng)

    def up(self, rng: Optional[np.random.Generator] = None) -> int:
        return self._draw(self.up_delay_ps, self.up_jitter_ps, rng)


@dataclass
class PtpSession:
    trace: OffsetTrace = field(default_factory=OffsetTrace)
    exchanges: list[PtpExchange] = field(default_factory=list)
    estimates: list[Fraction] = field(default_factory=list)


def run_ptp_session(link: LinkModel, rounds: int, master: ClockState, slave: ClockState,
                    interval_ps: int = 20 * PS_PER_MS, rng: Optional[np.random.Generator] = None,
                    master_ts: TimestampModel = TimestampModel(),
                    slave_ts: TimestampModel = TimestampModel(),
                    scheduler: Optional[Scheduler] = None, start_ps: int = 0,
                    master_rng: Optional[np.random.Generator] = None,
                    slave_rng: Optional[np.random.Generator] = None) -> PtpSession:
    """Run ``rounds`` SYNC / DELAY_REQ exchanges, stepping the slave by each offset estimate.

    The true master-minus-slave offset is sampled right after every step.
    When ``scheduler`` is given the exchanges are only scheduled and the
    caller drives the simulation; otherwise a private scheduler runs them.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    own = scheduler is None
    sched = scheduler if scheduler is not None else Scheduler()
    master_rng = master_rng if master_rng is not None else rng
    slave_rng = slave_rng if slave_rng is not None else rng
    session = PtpSession()

    def sync(event):
        now = event.fire_at
        t1 = read_clock(master, master_ts, now, master_rng)
        sched.schedule(now + link.down(rng), "slave", "sync",
                       lambda ev: on_sync(ev.fire_at, t1))

    def on_sync(now, t1):
        t2 = read_clock(slave, slave_ts, now, slave_rng)
        t_req = now + link.turnaround_ps
        sched.schedule(t_req, "slave", "delay_req",
                       lambda ev: send_req(ev.fire_at, t1, t2))

    def send_req(now, t1, t2):
        t3 = read_clock(slave, slave_ts, now, slave_rng)
        sched.schedule(now + link.up(rng), "master", "delay_req_rx",
                       lambda ev: on_req(ev.fire_at, t1, t2, t3))

    def on_req(now, t1, t2, t3):
        t4 = read_clock(master, master_ts, now, master_rng)
        sched.schedule(now + link.down(rng), "slave", "delay_resp",
                       lambda ev: on_resp(ev.fire_at, PtpExchange(t1, t2, t3, t4)))

    def on_resp(now, exchange):
        estimate = ptp_offset(exchange)
        step_clock(slave, -round(estimate), now)
        session.exchanges.append(exchange)
        session.estimates.append(estimate)
        session.trace.append(now, true_offset(master, slave, now))

    for k in range(rounds):
        sched.schedule(start_ps + k * interval_ps, "master", "sync", sync)
    if own:
        sched.run_until(2 ** 62)
    return session
