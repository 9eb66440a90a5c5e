"""Scenario files and the simulation assembly that runs them.

A scenario is a flat text file of ``dotted.key = value`` lines. Values are
JSON literals (numbers, quoted strings, booleans, lists); bare words are
taken as strings. ``#`` starts a comment.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, TextIO, Union

from .air import DEFAULT_T_OFF_PS, DistanceProfile, Gnb, GnbConfig, Numerology
from .analysis import DEFAULT_OUTLIER_BOUND_PS, OffsetTrace
from .clocks import ClockState, TimestampModel, true_offset
from .ptp import LinkModel, PtpSession, run_ptp_session
from .rbis import (CORRECTION_MODES, INIT_RULES, MasterUe, SideChannel, SlaveState,
                   SlaveUe, SyncRecord)
from .simcore import PS_PER_MS, PS_PER_S, PS_PER_US, Scheduler, rng_stream

PROTOCOLS = ("rbis", "ptp", "both")
_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")
_BARE_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


class ConfigError(ValueError):
    """Invalid scenario file; ``line`` points at the offending entry when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def parse_config_text(text: str, source: str = "<config>") -> tuple[dict[str, Any], dict[str, int]]:
    """Parse dotted-key lines into ``(values, line_numbers)``."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if not _KEY_RE.match(key):
            raise ConfigError(f"malformed key {key!r}", lineno, source)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})",
                              lineno, source)
        if not value.startswith('"') and "#" in value:
            value = value.split("#", 1)[0].strip()
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            if not _BARE_RE.match(value):
                raise ConfigError(f"cannot parse value {value!r} for {key!r}", lineno, source)
            parsed = value
        values[key] = parsed
        lines[key] = lineno
    return values, lines


def format_value(value: Any) -> str:
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return json.dumps(value)


@dataclass
class UeConfig:
    name: str
    role: str = "slave"
    distance_m: Union[float, list] = 0.0
    rate_ppm: float = 0.0
    offset_init_ps: int = 0
    jitter_sigma_ps: float = 0.0
    jitter_dist: str = "gaussian"
    outlier_prob: float = 0.0
    outlier_magnitude_ps: float = 0.0

    def clock(self) -> ClockState:
        return ClockState(self.rate_ppm, self.offset_init_ps)

    def ts_model(self) -> TimestampModel:
        dist = self.jitter_dist if self.jitter_sigma_ps > 0 else "none"
        return TimestampModel(self.jitter_sigma_ps, dist, self.outlier_prob,
                              self.outlier_magnitude_ps)

    def distance_profile(self) -> DistanceProfile:
        if isinstance(self.distance_m, list):
            return DistanceProfile([(round(t * PS_PER_S), d) for t, d in self.distance_m])
        return DistanceProfile(self.distance_m)


@dataclass
class Scenario:
    ues: list[UeConfig]
    duration_s: float = 60.0
    seed: int = 1
    scenario_id: str = "scenario"
    protocol: str = "rbis"
    correction_mode: str = "paper_full"
    init_rule: str = "prose"
    sampling_interval_ms: float = 0.0
    ssb_period_ms: int = 20
    mu: int = 1
    gnb_t_off_ps: int = DEFAULT_T_OFF_PS
    toa_jitter_sigma_ps: float = 0.0
    ta_update_interval_ms: int = 1000
    channel_delay_min_ps: int = 1 * PS_PER_MS
    channel_delay_max_ps: int = 5 * PS_PER_MS
    ptp_down_delay_ps: int = 1 * PS_PER_MS
    ptp_up_delay_ps: int = 1 * PS_PER_MS
    ptp_down_jitter_ps: float = 0.0
    ptp_up_jitter_ps: float = 0.0
    ptp_interval_ms: int = 20
    outlier_bound_ps: int = DEFAULT_OUTLIER_BOUND_PS
    bin_width_ps: int = 500_000
    event_log: bool = False

    @property
    def master(self) -> UeConfig:
        return next(u for u in self.ues if u.role == "master")

    @property
    def slaves(self) -> list[UeConfig]:
        return [u for u in self.ues if u.role == "slave"]

    @property
    def duration_ps(self) -> int:
        return round(self.duration_s * PS_PER_S)

    def gnb_config(self) -> GnbConfig:
        return GnbConfig(self.ssb_period_ms, Numerology(self.mu), self.gnb_t_off_ps,
                         self.toa_jitter_sigma_ps, self.ta_update_interval_ms)

    def link_model(self) -> LinkModel:
        return LinkModel(self.ptp_down_delay_ps, self.ptp_up_delay_ps,
                         self.ptp_down_jitter_ps, self.ptp_up_jitter_ps)

    def to_config_text(self) -> str:
        out = []
        for key, attr in _TOP_KEYS.items():
            out.append(f"{key} = {format_value(getattr(self, attr))}")
        for ue in self.ues:
            for attr in _UE_KEYS:
                out.append(f"ue.{ue.name}.{attr} = {format_value(getattr(ue, attr))}")
        return "\n".join(out) + "\n"


# config key -> Scenario attribute
_TOP_KEYS = {
    "scenario.id": "scenario_id",
    "duration_s": "duration_s",
    "seed": "seed",
    "protocol": "protocol",
    "correction_mode": "correction_mode",
    "init_rule": "init_rule",
    "sampling.interval_ms": "sampling_interval_ms",
    "gnb.ssb_period_ms": "ssb_period_ms",
    "gnb.mu": "mu",
    "gnb.t_off_ps": "gnb_t_off_ps",
    "gnb.toa_jitter_sigma_ps": "toa_jitter_sigma_ps",
    "gnb.ta_update_interval_ms": "ta_update_interval_ms",
    "channel.delay_min_ps": "channel_delay_min_ps",
    "channel.delay_max_ps": "channel_delay_max_ps",
    "ptp.down_delay_ps": "ptp_down_delay_ps",
    "ptp.up_delay_ps": "ptp_up_delay_ps",
    "ptp.down_jitter_ps": "ptp_down_jitter_ps",
    "ptp.up_jitter_ps": "ptp_up_jitter_ps",
    "ptp.interval_ms": "ptp_interval_ms",
    "analysis.outlier_bound_ps": "outlier_bound_ps",
    "analysis.bin_width_ps": "bin_width_ps",
    "output.event_log": "event_log",
}
_UE_KEYS = ("role", "distance_m", "rate_ppm", "offset_init_ps", "jitter_sigma_ps",
            "jitter_dist", "outlier_prob", "outlier_magnitude_ps")
_INT_ATTRS = {"seed", "ssb_period_ms", "mu", "gnb_t_off_ps", "ta_update_interval_ms",
              "channel_delay_min_ps", "channel_delay_max_ps", "ptp_down_delay_ps",
              "ptp_up_delay_ps", "ptp_interval_ms", "outlier_bound_ps", "bin_width_ps",
              "offset_init_ps"}
_STR_ATTRS = {"scenario_id", "protocol", "correction_mode", "init_rule", "role", "jitter_dist"}


def _coerce(attr: str, value: Any, line: int, source: str) -> Any:
    if attr in _STR_ATTRS:
        if not isinstance(value, str):
            raise ConfigError(f"{attr} must be a string", line, source)
        return value
    if attr == "event_log":
        if not isinstance(value, bool):
            raise ConfigError("output.event_log must be true or false", line, source)
        return value
    if attr == "distance_m":
        if isinstance(value, list):
            try:
                return [[float(t), float(d)] for t, d in value]
            except (TypeError, ValueError):
                raise ConfigError("distance_m list must hold [time_s, metres] pairs",
                                  line, source) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{attr} must be a number, got {value!r}", line, source)
    if attr in _INT_ATTRS:
        if float(value) != int(value):
            raise ConfigError(f"{attr} must be an integer, got {value!r}", line, source)
        return int(value)
    return float(value)


def scenario_from_text(text: str, source: str = "<config>") -> Scenario:
    values, lines = parse_config_text(text, source)
    top: dict[str, Any] = {}
    ue_fields: dict[str, dict[str, Any]] = {}
    ue_lines: dict[str, int] = {}
    for key, value in values.items():
        line = lines[key]
        if key in _TOP_KEYS:
            attr = _TOP_KEYS[key]
            top[attr] = _coerce(attr, value, line, source)
        elif key.startswith("ue.") and key.count(".") == 2:
            _, name, attr = key.split(".")
            if attr not in _UE_KEYS:
                raise ConfigError(f"unknown UE key {attr!r}; expected one of {', '.join(_UE_KEYS)}",
                                  line, source)
            ue_fields.setdefault(name, {})[attr] = _coerce(attr, value, line, source)
            ue_lines.setdefault(name, line)
        else:
            raise ConfigError(f"unknown key {key!r}", line, source)

    def check(cond: bool, message: str, key: Optional[str] = None):
        if not cond:
            raise ConfigError(message, lines.get(key) if key else None, source)

    ues = []
    for name, fields in ue_fields.items():
        try:
            ue = UeConfig(name, **fields)
            ue.clock()
            ue.ts_model()
            ue.distance_profile()
        except ValueError as exc:
            raise ConfigError(f"ue.{name}: {exc}", ue_lines[name], source) from None
        if ue.role not in ("master", "slave"):
            raise ConfigError(f"ue.{name}.role must be 'master' or 'slave'",
                              lines.get(f"ue.{name}.role", ue_lines[name]), source)
        ues.append(ue)
    scenario = Scenario(ues, **top)
    masters = [u for u in ues if u.role == "master"]
    check(len(masters) == 1, f"exactly one master UE required, found {len(masters)}")
    check(len(scenario.slaves) >= 1, "at least one slave UE required")
    check(scenario.duration_s > 0, "duration_s must be positive", "duration_s")
    check(scenario.protocol in PROTOCOLS, f"protocol must be one of {PROTOCOLS}", "protocol")
    check(scenario.correction_mode in CORRECTION_MODES,
          f"correction_mode must be one of {sorted(CORRECTION_MODES)}", "correction_mode")
    check(scenario.init_rule in INIT_RULES, f"init_rule must be one of {INIT_RULES}", "init_rule")
    check(scenario.sampling_interval_ms >= 0, "sampling.interval_ms must be >= 0",
          "sampling.interval_ms")
    check(0 <= scenario.channel_delay_min_ps <= scenario.channel_delay_max_ps,
          "channel delays need 0 <= delay_min_ps <= delay_max_ps", "channel.delay_min_ps")
    check(scenario.ptp_interval_ms > 0, "ptp.interval_ms must be positive", "ptp.interval_ms")
    check(scenario.outlier_bound_ps > 0, "analysis.outlier_bound_ps must be positive",
          "analysis.outlier_bound_ps")
    check(scenario.bin_width_ps > 0, "analysis.bin_width_ps must be positive",
          "analysis.bin_width_ps")
    try:
        scenario.gnb_config()
    except ValueError as exc:
        key = "gnb.mu" if "mu" in str(exc) else "gnb.ssb_period_ms"
        raise ConfigError(str(exc), lines.get(key), source) from None
    return scenario


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return scenario_from_text(text, str(path))


@dataclass
class SlaveRun:
    name: str
    trace: OffsetTrace
    records: list[SyncRecord] = field(default_factory=list)
    match_failures: int = 0
    mispairings: int = 0
    init_branch: Optional[str] = None


@dataclass
class ProtocolRun:
    protocol: str
    slaves: dict[str, SlaveRun]
    events: int = 0


def _periodic_sampler(scenario: Scenario, sched: Scheduler, master: ClockState,
                      slaves: dict[str, tuple[ClockState, OffsetTrace]]) -> None:
    interval = round(scenario.sampling_interval_ms * PS_PER_MS)
    if interval <= 0:
        return

    def sample(event):
        for clock, trace in slaves.values():
            trace.append(event.fire_at, true_offset(master, clock, event.fire_at))
        nxt = event.fire_at + interval
        if nxt <= scenario.duration_ps:
            sched.schedule(nxt, "sampler", "sample", sample)

    if interval <= scenario.duration_ps:
        sched.schedule(interval, "sampler", "sample", sample)


def _metadata(scenario: Scenario, protocol: str, slave: str) -> dict[str, str]:
    return {"scenario": scenario.scenario_id, "seed": str(scenario.seed),
            "protocol": protocol, "slave": slave,
            "correction_mode": scenario.correction_mode if protocol == "rbis" else "ptp"}


def simulate_rbis(scenario: Scenario, event_log: Optional[TextIO] = None) -> ProtocolRun:
    sched = Scheduler(event_log)
    seed = scenario.seed
    gnb = Gnb(scenario.gnb_config(), sched)
    channel = SideChannel(sched, rng_stream(seed, "rbis/channel"),
                          scenario.channel_delay_min_ps, scenario.channel_delay_max_ps)
    mcfg = scenario.master
    master = MasterUe(mcfg.name, mcfg.clock(), mcfg.ts_model(),
                      rng_stream(seed, f"rbis/{mcfg.name}"), channel)
    master.attach(gnb.attach(mcfg.name, mcfg.distance_profile(), master.on_pbch,
                             rng_stream(seed, f"rbis/toa/{mcfg.name}")).ta)
    per_round = scenario.sampling_interval_ms <= 0
    runs: dict[str, SlaveRun] = {}
    sampled: dict[str, tuple[ClockState, OffsetTrace]] = {}

    def on_corrected(slave: SlaveUe, record: SyncRecord):
        if per_round:
            runs[slave.name].trace.append(record.true_time_ps, record.true_offset_after_ps)

    slaves = []
    for cfg in scenario.slaves:
        state = SlaveState(scenario.ssb_period_ms, scenario.correction_mode, scenario.init_rule)
        slave = SlaveUe(cfg.name, cfg.clock(), cfg.ts_model(), rng_stream(seed, f"rbis/{cfg.name}"),
                        state, master, on_corrected)
        slave.attach(gnb.attach(cfg.name, cfg.distance_profile(), slave.on_pbch,
                                rng_stream(seed, f"rbis/toa/{cfg.name}")).ta)
        master.slaves.append(slave)
        slaves.append(slave)
        trace = OffsetTrace(metadata=_metadata(scenario, "rbis", cfg.name))
        runs[cfg.name] = SlaveRun(cfg.name, trace)
        sampled[cfg.name] = (slave.clock, trace)

    master.start(0)
    gnb.start(0)
    _periodic_sampler(scenario, sched, master.clock, sampled)
    events = sched.run_until(scenario.duration_ps)
    for slave in slaves:
        run = runs[slave.name]
        run.records = slave.records
        run.match_failures = slave.state.match_failures
        run.mispairings = slave.mispairings
        run.init_branch = slave.state.init_branch
    return ProtocolRun("rbis", runs, events)


def simulate_ptp(scenario: Scenario, event_log: Optional[TextIO] = None) -> ProtocolRun:
    sched = Scheduler(event_log)
    seed = scenario.seed
    mcfg = scenario.master
    interval = scenario.ptp_interval_ms * PS_PER_MS
    rounds = max(1, scenario.duration_ps // interval)
    runs: dict[str, SlaveRun] = {}
    sampled: dict[str, tuple[ClockState, OffsetTrace]] = {}
    sessions: dict[str, PtpSession] = {}
    master_clocks = {}
    for cfg in scenario.slaves:
        # each pairwise session gets its own copy of the master clock model
        mclock = mcfg.clock()
        sclock = cfg.clock()
        master_clocks[cfg.name] = mclock
        sessions[cfg.name] = run_ptp_session(
            scenario.link_model(), rounds, mclock, sclock, interval,
            rng=rng_stream(seed, f"ptp/link/{cfg.name}"),
            master_ts=mcfg.ts_model(), slave_ts=cfg.ts_model(), scheduler=sched,
            master_rng=rng_stream(seed, f"ptp/{mcfg.name}/{cfg.name}"),
            slave_rng=rng_stream(seed, f"ptp/{cfg.name}"))
        sampled[cfg.name] = (sclock, sessions[cfg.name].trace)
    if scenario.sampling_interval_ms > 0:
        for name, (sclock, _) in list(sampled.items()):
            session_trace = OffsetTrace(metadata=_metadata(scenario, "ptp", name))
            sampled[name] = (sclock, session_trace)
            _periodic_sampler(scenario, sched, master_clocks[name], {name: sampled[name]})
    events = sched.run_until(scenario.duration_ps)
    for cfg in scenario.slaves:
        trace = sampled[cfg.name][1]
        trace.metadata = _metadata(scenario, "ptp", cfg.name)
        runs[cfg.name] = SlaveRun(cfg.name, trace)
    return ProtocolRun("ptp", runs, events)


def simulate(scenario: Scenario, event_log: Optional[TextIO] = None) -> dict[str, ProtocolRun]:
    protocols = ("rbis", "ptp") if scenario.protocol == "both" else (scenario.protocol,)
    out = {}
    for proto in protocols:
        out[proto] = (simulate_rbis if proto == "rbis" else simulate_ptp)(scenario, event_log)
    return out


SWEEPABLE = ("distance", "jitter_sigma", "mu", "ssb_period", "correction_mode")


def apply_sweep_value(scenario: Scenario, parameter: str, value: Any) -> Scenario:
    """Copy of ``scenario`` with one sweepable parameter set.

    ``distance`` places every slave ``value`` metres further from the gNB
    than the master.
    """
    if parameter not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; sweepable: {', '.join(SWEEPABLE)}")
    if parameter == "distance":
        base = scenario.master.distance_profile().at(0)
        ues = [replace(u, distance_m=base + float(value)) if u.role == "slave" else u
               for u in scenario.ues]
        return replace(scenario, ues=ues)
    if parameter == "jitter_sigma":
        return replace(scenario, ues=[replace(u, jitter_sigma_ps=float(value)) for u in scenario.ues])
    if parameter == "mu":
        return replace(scenario, mu=int(value))
    if parameter == "ssb_period":
        return replace(scenario, ssb_period_ms=int(value))
    return replace(scenario, correction_mode=str(value))
