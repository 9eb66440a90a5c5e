from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbis5g.air import (RAR_TAC_MAX, SFN_TICK_PS, SPEED_OF_LIGHT, DistanceProfile, Gnb,
                        GnbConfig, Numerology, TimingAdvanceState, gnb_measure_tac,
                        propagation_delay, runtime_difference, sfn_at, step_distance_m,
                        step_size_ps, ta_from_rar, ta_update_macce, tc_picoseconds)
from rbis5g.simcore import PS_PER_MS, PS_PER_NS, PS_PER_S, Scheduler

# published TA adjustment step sizes per numerology: (ns, m)
STEP_TABLE = {0: (520.85, 78.13), 1: (260.42, 39.06), 2: (130.21, 19.53), 3: (65.10, 9.77)}
mus = st.sampled_from([0, 1, 2, 3])


class TestTc:
    def test_value(self):
        exact, rounded = tc_picoseconds()
        assert exact == Fraction(10**12, 480_000 * 4096)
        assert abs(float(exact) - 1e12 / (480e3 * 4096)) < 1e-9
        assert rounded == 509
        assert abs(float(exact) / 1000 - 0.509) < 0.0005

    def test_1024_tc(self):
        exact, _ = tc_picoseconds()
        assert abs(float(1024 * exact) / PS_PER_NS - 520.85) < 0.05

    def test_exact_rational(self):
        tc, _ = tc_picoseconds()
        assert 2 * tc - tc == tc


class TestNumerology:
    @pytest.mark.parametrize("mu,scs", [(0, 15), (1, 30), (2, 60), (3, 120)])
    def test_scs(self, mu, scs):
        assert Numerology(mu).scs_khz == scs

    def test_invalid(self):
        with pytest.raises(ValueError):
            Numerology(4)

    @pytest.mark.parametrize("mu", [0, 1, 2, 3])
    def test_step_table(self, mu):
        ns, metres = STEP_TABLE[mu]
        assert abs(float(step_size_ps(mu)) / PS_PER_NS - ns) < 0.05
        assert abs(step_distance_m(mu) - metres) < 0.01

    def test_exact_c_step_distance(self):
        # 520.83 ns * c / 2 with the exact speed of light
        assert abs(step_distance_m(0, SPEED_OF_LIGHT) - 78.07) < 0.01


class TestSfn:
    def test_origin(self):
        assert sfn_at(0) == 0

    def test_full_wrap(self):
        assert sfn_at(10_240 * PS_PER_MS) == 0

    def test_last_tick(self):
        assert sfn_at(10_230 * PS_PER_MS) == 1023

    @given(st.integers(0, 50_000))
    def test_monotone_modular(self, k):
        t = k * SFN_TICK_PS
        assert sfn_at(t + SFN_TICK_PS) == (sfn_at(t) + 1) % 1024


class TestPropagation:
    def test_zero(self):
        assert propagation_delay(0) == 0

    def test_100m(self):
        assert propagation_delay(100) == round(100 / 299_792_458 * 1e12) == 333_564

    def test_half_step_distance(self):
        # 39.06 m one way ~ half of the mu=1 step (260.42 ns)
        assert abs(propagation_delay(39.06) / PS_PER_NS - 130.3) < 0.05

    def test_negative(self):
        with pytest.raises(ValueError):
            propagation_delay(-1)


class TestTimingAdvance:
    @pytest.mark.parametrize("mu", [0, 1, 2, 3])
    def test_rar_zero(self, mu):
        assert ta_from_rar(0, mu) == 0

    def test_rar_one_step(self):
        n_ta = ta_from_rar(1, 0)
        assert n_ta == 1024
        assert abs(float(n_ta * tc_picoseconds()[0]) / PS_PER_NS - 520.85) < 0.05

    def test_rar_mu1(self):
        assert ta_from_rar(2, 1) == 1024

    def test_rar_range(self):
        with pytest.raises(ValueError):
            ta_from_rar(RAR_TAC_MAX + 1, 0)
        with pytest.raises(ValueError):
            ta_from_rar(-1, 0)

    def test_macce_examples(self):
        assert ta_update_macce(777, 31, 2) == 777
        assert ta_update_macce(1024, 30, 0) == 0
        assert ta_update_macce(0, 32, 1) == 512

    def test_macce_clamps_at_zero(self):
        assert ta_update_macce(100, 0, 0) == 0

    def test_macce_range(self):
        with pytest.raises(ValueError):
            ta_update_macce(0, 64, 0)

    @given(st.integers(0, RAR_TAC_MAX), mus, st.integers(1, 20))
    def test_rar_then_neutral_macce_is_fixed(self, tac, mu, n):
        n_ta = ta_from_rar(tac, mu)
        for _ in range(n):
            n_ta = ta_update_macce(n_ta, 31, mu)
        assert n_ta == ta_from_rar(tac, mu)

    def test_t_ta_includes_offset(self):
        state = TimingAdvanceState(1024, 25600)
        assert state.t_ta == round((1024 + 25600) * tc_picoseconds()[0])
        # 25600 Tc is the ~13 us duplex switch offset
        assert abs(TimingAdvanceState(0, 25600).t_ta / 1e6 - 13.02) < 0.01

    @given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 40_000),
           st.integers(0, 40_000))
    def test_runtime_difference_ignores_offset(self, n_r, n_s, off1, off2):
        a = runtime_difference(n_r, TimingAdvanceState(n_s, off1))
        b = runtime_difference(n_r, TimingAdvanceState(n_s, off2))
        assert a == b == (TimingAdvanceState(n_r, off1).t_ta_exact
                          - TimingAdvanceState(n_s, off1).t_ta_exact)


def brute_force_rar(t_prop, mu):
    """Enumerate every RAR index and keep the closest, smaller index on ties."""
    step = step_size_ps(mu)
    best = min(range(RAR_TAC_MAX + 1), key=lambda i: (abs(i * step - 2 * t_prop), i))
    return best


class TestGnbMeasure:
    def test_zero(self):
        assert gnb_measure_tac(0, 1, "rar") == (0, False)

    def test_one_step_mu0(self):
        assert gnb_measure_tac(260_400, 0, "rar").index == 1

    def test_macce_one_step_up(self):
        t0 = propagation_delay(500)
        n_ta = ta_from_rar(gnb_measure_tac(t0, 1, "rar").index, 1)
        exact_n_ta = Fraction(2 * t0) / tc_picoseconds()[0]
        # start from a TA that matches t0 exactly, then move 130.2 ns further out
        n_ta = round(exact_n_ta)
        assert gnb_measure_tac(t0 + 130_200, 1, "macce", n_ta).index == 32

    def test_macce_saturates(self):
        far = propagation_delay(10_000)
        tac = gnb_measure_tac(far, 0, "macce", 0)
        assert tac == (63, True)

    def test_rar_saturates(self):
        assert gnb_measure_tac(PS_PER_S, 0, "rar") == (RAR_TAC_MAX, True)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            gnb_measure_tac(0, 0, "sounding")

    @settings(max_examples=60)
    @given(st.integers(0, 900_000), mus)
    def test_matches_brute_force(self, t_prop, mu):
        assert gnb_measure_tac(t_prop, mu, "rar").index == brute_force_rar(t_prop, mu)

    @given(st.integers(0, 900_000), mus)
    def test_quantization_bound(self, t_prop, mu):
        n_ta = ta_from_rar(gnb_measure_tac(t_prop, mu, "rar").index, mu)
        err = n_ta * tc_picoseconds()[0] - 2 * t_prop
        assert abs(err) <= step_size_ps(mu) / 2

    def test_tie_goes_down(self):
        # step(mu=0) = 1562500/3 ps, so 2 * 390625 ps is exactly 1.5 steps
        assert 2 * 390_625 == Fraction(3, 2) * step_size_ps(0)
        assert gnb_measure_tac(390_625, 0, "rar").index == 1
        assert brute_force_rar(390_625, 0) == 1


class TestBroadcast:
    def _gnb(self, period=20, distances=(10, 10)):
        sched = Scheduler()
        gnb = Gnb(GnbConfig(period, Numerology(1)), sched)
        seen = {}
        for i, d in enumerate(distances):
            name = f"ue{i}"
            seen[name] = []
            gnb.attach(name, DistanceProfile(d), lambda p, t, n=name: seen[n].append((p, t)))
        return sched, gnb, seen

    def test_equidistant_identical_toa(self):
        sched, gnb, seen = self._gnb()
        gnb.start(0)
        sched.run_until(100 * PS_PER_MS)
        assert [t for _, t in seen["ue0"]] == [t for _, t in seen["ue1"]]
        assert [p for p, _ in seen["ue0"]] == [p for p, _ in seen["ue1"]]

    def test_toa_difference_100m(self):
        sched, gnb, seen = self._gnb(distances=(10, 110))
        gnb.start(0)
        sched.run_until(100 * PS_PER_MS)
        diffs = {b[1] - a[1] for a, b in zip(seen["ue0"], seen["ue1"])}
        assert diffs == {propagation_delay(110) - propagation_delay(10)}
        assert abs(diffs.pop() / PS_PER_NS - 100 / 299_792_458 * 1e9) < 0.002

    def test_sfn_advances_by_two(self):
        sched, gnb, seen = self._gnb(period=20)
        gnb.start(0)
        sched.run_until(200 * PS_PER_MS)
        sfns = [p.sfn for p, _ in seen["ue0"]]
        assert all((b - a) % 1024 == 2 for a, b in zip(sfns, sfns[1:]))
        times = [p.emitted_at for p, _ in seen["ue0"]]
        assert {b - a for a, b in zip(times, times[1:])} == {20 * PS_PER_MS}

    def test_half_frames_at_5ms(self):
        sched, gnb, seen = self._gnb(period=5)
        gnb.start(0)
        sched.run_until(19 * PS_PER_MS)
        assert [(p.sfn, p.half_frame) for p, _ in seen["ue0"]] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_off_grid_rejected(self):
        _, gnb, _ = self._gnb()
        with pytest.raises(ValueError):
            gnb.broadcast_pbch(3)

    def test_period_bounds(self):
        with pytest.raises(ValueError):
            GnbConfig(ssb_period_ms=200)
        with pytest.raises(ValueError):
            GnbConfig(ssb_period_ms=7)

    def test_mobility_updates_ta(self):
        sched = Scheduler()
        gnb = Gnb(GnbConfig(20, Numerology(1)), sched)
        ue = gnb.attach("ue", DistanceProfile([(0, 10.0), (2 * PS_PER_S, 200.0)]),
                        lambda p, t: None)
        gnb.start(0)
        sched.run_until(5 * PS_PER_S)
        err = ue.ta.n_ta * tc_picoseconds()[0] - 2 * propagation_delay(200)
        assert abs(err) <= step_size_ps(1) / 2
