import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbis5g.clocks import ClockState
from rbis5g.ptp import LinkModel, PtpExchange, ptp_delay, ptp_offset, run_ptp_session
from rbis5g.simcore import PS_PER_MS, PS_PER_US, rng_stream

stamps = st.integers(-10**15, 10**15)


class TestEstimators:
    def test_symmetric(self):
        x = PtpExchange(0, 5, 10, 15)
        assert ptp_delay(x) == 5 and ptp_offset(x) == 0

    def test_asymmetric_by_hand(self):
        x = PtpExchange(0, 7, 10, 13)
        assert ptp_delay(x) == 5 and ptp_offset(x) == 2

    def test_loopback(self):
        assert ptp_delay(PtpExchange(0, 0, 0, 0)) == 0

    def test_slave_ahead(self):
        d, off = 1_000, 777
        t1, t3 = 0, 50_000
        x = PtpExchange(t1, t1 + d + off, t3, t3 + d - off)
        assert ptp_offset(x) == off and ptp_delay(x) == d

    def test_negative_delay_flagged(self, caplog):
        with caplog.at_level(logging.WARNING, logger="rbis5g.ptp"):
            assert ptp_delay(PtpExchange(0, -10, 0, 2)) == -4
        assert "negative path delay" in caplog.text

    @given(stamps, stamps, stamps, stamps)
    def test_identities(self, t1, t2, t3, t4):
        x = PtpExchange(t1, t2, t3, t4)
        assert ptp_offset(x) + ptp_delay(x) == t2 - t1
        assert ptp_delay(x) - ptp_offset(x) == t4 - t3


class TestSession:
    def test_symmetric_converges(self):
        link = LinkModel(800 * PS_PER_US, 800 * PS_PER_US)
        s = run_ptp_session(link, 50, ClockState(), ClockState(0, 3 * PS_PER_US))
        assert all(abs(o) <= 1 for o in s.trace.offsets)

    @pytest.mark.parametrize("asym", [2, 1_000, 333_333, 40 * PS_PER_US])
    def test_constant_asymmetry(self, asym):
        link = LinkModel(PS_PER_MS, PS_PER_MS + asym)
        s = run_ptp_session(link, 30, ClockState(), ClockState(0, -PS_PER_US))
        assert all(abs(abs(o) - asym / 2) <= 1 for o in s.trace.offsets[1:])

    def test_jitter_variance(self):
        su, sd = 3 * PS_PER_US, 4 * PS_PER_US
        link = LinkModel(PS_PER_MS, PS_PER_MS, sd, su)
        s = run_ptp_session(link, 10_000, ClockState(), ClockState(), rng=rng_stream(1, "ptp"))
        # each step leaves exactly that round's estimation error behind
        err = np.array(s.trace.offsets, dtype=float)
        assert abs(np.std(err, ddof=1) / (np.hypot(su, sd) / 2) - 1) < 0.05

    def test_unbiased_under_symmetric_jitter(self):
        sigma = 5 * PS_PER_US
        link = LinkModel(PS_PER_MS, PS_PER_MS, sigma, sigma)
        s = run_ptp_session(link, 10_000, ClockState(), ClockState(), rng=rng_stream(2, "ptp"))
        off = np.array(s.trace.offsets, dtype=float)
        sd = off.std()
        assert abs(off.mean()) <= 3 * sd / np.sqrt(off.size)

    def test_rounds_validated(self):
        with pytest.raises(ValueError):
            run_ptp_session(LinkModel(), 0, ClockState(), ClockState())
