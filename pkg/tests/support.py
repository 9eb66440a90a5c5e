"""Scenario builders shared by the test modules."""
from rbis5g.scenario import Scenario, UeConfig
from rbis5g.simcore import PS_PER_MS


def two_ue(master_m=10.0, slave_m=10.0, duration_s=10.0, **kw):
    master_kw = {k[7:]: kw.pop(k) for k in list(kw) if k.startswith("master_")}
    slave_kw = {k[6:]: kw.pop(k) for k in list(kw) if k.startswith("slave_")}
    ues = [UeConfig("master", "master", master_m, **master_kw),
           UeConfig("slave1", "slave", slave_m, **slave_kw)]
    return Scenario(ues, duration_s=duration_s, **kw)


def steady(trace, after_ps=2_000 * PS_PER_MS):
    """Offsets sampled after the start-up transient."""
    return [o for t, o in zip(trace.times, trace.offsets) if t >= after_ps]


def reference_trace(seed=2021, n=35_000, n_outliers=180, mean_us=-1.32, sigma_us=2.95,
                     bound_us=10.0):
    """Gaussian offsets kept inside +/- bound plus outliers strictly beyond it."""
    import numpy as np

    from rbis5g.analysis import OffsetTrace

    rng = np.random.default_rng(seed)
    core = []
    while len(core) < n:
        draw = rng.normal(mean_us, sigma_us, n)
        core.extend(draw[np.abs(draw) <= bound_us][: n - len(core)])
    mags = rng.uniform(bound_us * 1.05, 3 * bound_us, n_outliers)
    signs = rng.choice([-1.0, 1.0], n_outliers)
    values = np.concatenate([core, mags * signs])
    rng.shuffle(values)
    offsets = [int(round(v * 1e6)) for v in values]
    times = [(k + 1) * 20 * PS_PER_MS for k in range(len(offsets))]
    return OffsetTrace(times, offsets, {"scenario": "fixture", "protocol": "rbis",
                                        "slave": "fixture"})
