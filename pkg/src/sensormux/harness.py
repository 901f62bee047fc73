"""Experiment runners: channel sweeps, constant detection, app replay, jitter.

Every runner returns aggregate rows plus raw per-trial rows. Trial ``i``
owns its engine and RNG stream, seeded with ``seed ^ i``, so any subset of
trials can be rerun in isolation and the CSV output is byte-stable.
"""
from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import fingerprint as fp
from .covert import (
    DEFAULT_PULSE_GRID_MS,
    ChannelFailure,
    PulseTooShort,
    channel_params,
    load_channel_table,
    run_channel,
)
from .inference import DEFAULT_EPSILON
from .sensorstack import (
    BUNDLED_PROFILES,
    MultiplexPolicy,
    SensorStack,
    SensorType,
    batching_band,
    clamp_request,
    get_sensor_list,
    load_profile,
)
from .simcore import Engine, SeededRng

KINDS = ("sweep", "constants", "apps", "jitter")
DEFAULT_PROFILES = {
    "sweep": BUNDLED_PROFILES,
    "constants": BUNDLED_PROFILES,
    "apps": ("poco_f1", "pixel_4a"),  # Moto G5 exposes no MF and fixed-rate GR/LA/RV
    "jitter": BUNDLED_PROFILES,
}
VICTIM_WATCH_US = 1_500_000


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    profiles: tuple[str, ...] = ()
    policy: str = "max"
    seed: int = 0
    trials: int = 100
    grid_ms: tuple[float, ...] = DEFAULT_PULSE_GRID_MS
    bits: tuple[int, int] = (64, 64)
    sensors: tuple[str, ...] = ()
    epsilon: float = DEFAULT_EPSILON
    samples: int = 10_000
    db: str | None = None
    include_red: bool = False
    max_failure_rate: float | None = None
    out: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: expected one of {', '.join(KINDS)}, got {self.kind!r}")
        if not self.profiles:
            self.profiles = DEFAULT_PROFILES[self.kind]
        self.profiles = tuple(self.profiles)
        self.grid_ms = tuple(float(w) for w in self.grid_ms)
        self.bits = tuple(int(b) for b in self.bits)
        self.sensors = tuple(str(s).upper() for s in self.sensors)
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if self.kind == "sweep" and not self.grid_ms:
            raise ConfigError("grid_ms: must be non-empty for sweeps")
        if any(w <= 0 for w in self.grid_ms):
            raise ConfigError("grid_ms: pulse widths must be positive")
        if len(self.bits) != 2 or not 1 <= self.bits[0] <= self.bits[1]:
            raise ConfigError("bits: expected [lo, hi] with 1 <= lo <= hi")
        if self.samples < 1:
            raise ConfigError("samples: must be >= 1")
        for s in self.sensors:
            if s not in SensorType.__members__:
                raise ConfigError(f"sensors: unknown sensor {s!r}")
        try:
            MultiplexPolicy.parse(self.policy)
        except ValueError as exc:
            raise ConfigError(f"policy: {exc}") from None

    @property
    def multiplex_policy(self) -> MultiplexPolicy:
        return MultiplexPolicy.parse(self.policy)

    def wants(self, sensor: SensorType) -> bool:
        return not self.sensors or sensor.value in self.sensors

    @classmethod
    def from_toml(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        try:
            doc = tomllib.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(f"{path}: unknown field {key!r}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**doc)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


@dataclass
class RunResult:
    rows: list
    trials: list
    failures: int = 0
    total: int = 0

    @property
    def failure_rate(self) -> float:
        return self.failures / self.total if self.total else 0.0


def _profiles(cfg: ExperimentConfig):
    return [load_profile(p) for p in cfg.profiles]


# -- channel sweep ------------------------------------------------------------

@dataclass(frozen=True)
class SweepTrial:
    device: str
    sensor: str
    pulse_width_ms: float
    trial: int
    seed: int
    n_bits: int
    status: str  # ok | timeout | invalid
    edit_distance: int
    bit_rate_bps: float
    sent: str
    received: str


@dataclass(frozen=True)
class SweepRow:
    device: str
    sensor: str
    pulse_width_ms: float
    trials: int
    failures: int
    mean_edit_distance: float
    median_bit_rate_bps: float


def sweep_trial(profile, sensor: SensorType, pulse_width_us: int, trial: int, cfg: ExperimentConfig,
                table=None) -> SweepTrial:
    seed = cfg.seed ^ trial
    rng = SeededRng(seed)
    bits = rng.bits(rng.uniform_int(*cfg.bits))
    w_ms = pulse_width_us / 1000
    try:
        params = channel_params(profile.name, sensor, pulse_width_us, table, cfg.epsilon)
        rep = run_channel(bits, params, profile, cfg.multiplex_policy, seed)
    except PulseTooShort:
        return SweepTrial(profile.name, sensor.value, w_ms, trial, seed, len(bits), "invalid",
                          len(bits), math.nan, bits, "")
    except ChannelFailure as exc:
        return SweepTrial(profile.name, sensor.value, w_ms, trial, seed, len(bits), "timeout",
                          len(bits), math.nan, bits, exc.received)
    return SweepTrial(profile.name, sensor.value, w_ms, trial, seed, len(bits), "ok",
                      rep.edit_distance, rep.bit_rate_bps, bits, rep.received)


def aggregate_sweep(trials: list[SweepTrial]) -> SweepRow:
    t0 = trials[0]
    rates = [t.bit_rate_bps for t in trials if t.status == "ok"]
    return SweepRow(t0.device, t0.sensor, t0.pulse_width_ms, len(trials),
                    sum(t.status != "ok" for t in trials),
                    statistics.fmean(t.edit_distance for t in trials),
                    statistics.median(rates) if rates else math.nan)


def cmd_channel_sweep(cfg: ExperimentConfig) -> RunResult:
    table = load_channel_table()
    res = RunResult([], [])
    for profile in _profiles(cfg):
        sensors = [s for s in table.get(profile.name, {}) if cfg.wants(s)]
        for sensor in sorted(sensors, key=list(SensorType).index):
            for w_ms in cfg.grid_ms:
                batch = [sweep_trial(profile, sensor, round(w_ms * 1000), i, cfg, table)
                         for i in range(cfg.trials)]
                res.trials.extend(batch)
                res.rows.append(aggregate_sweep(batch))
    res.total = len(res.trials)
    res.failures = sum(t.status != "ok" or t.edit_distance > 0 for t in res.trials)
    return res


# -- constant detection -------------------------------------------------------

@dataclass(frozen=True)
class ConstantTrial:
    device: str
    sensor: str
    constant: str
    trial: int
    seed: int
    registered_at_us: int
    detected_at_us: int | None
    label: str
    latency_us: int | None
    spurious: int  # detections on sensors the victim never touched


@dataclass(frozen=True)
class ConstantRow:
    device: str
    sensor: str
    constant: str
    observed_ms: float
    distinguishable: bool
    trials: int
    detections: int
    correct: int
    detection_rate: float
    mean_latency_ms: float


def constant_trial(profile, sensor: SensorType, constant: fp.SdkConstant, trial: int,
                   cfg: ExperimentConfig) -> ConstantTrial:
    seed = cfg.seed ^ trial
    engine = Engine(seed)
    stack = SensorStack(profile, engine, cfg.multiplex_policy)
    obs = fp.start_observer(profile, stack=stack, epsilon=cfg.epsilon)
    carrier = profile.spec(sensor).max_period_us
    start = 2 * carrier + engine.rng.uniform_int(0, carrier)
    victim = fp.Victim(stack, [(sensor, constant)])
    victim.schedule(start)
    dets = fp.attach_registration_times(fp.observe(obs, start + VICTIM_WATCH_US), victim)
    mine = [d for d in dets if d.sensor == sensor]
    first = mine[0] if mine else None
    return ConstantTrial(profile.name, sensor.value, constant.value, trial, seed, start,
                         first.detected_at if first else None,
                         first.label_text() if first else "",
                         first.latency_us if first else None,
                         len(dets) - len(mine[:1]))


def cmd_fingerprint_constants(cfg: ExperimentConfig) -> RunResult:
    res = RunResult([], [])
    for profile in _profiles(cfg):
        for cell in fp.observed_constant_table(profile, cfg.epsilon):
            if not cfg.wants(cell.sensor) or not (cell.distinguishable or cfg.include_red):
                continue
            batch = [constant_trial(profile, cell.sensor, cell.constant, i, cfg) for i in range(cfg.trials)]
            res.trials.extend(batch)
            hits = [t for t in batch if t.label == cell.constant.value]
            lat = [t.latency_us for t in hits]
            res.rows.append(ConstantRow(
                profile.name, cell.sensor.value, cell.constant.value, cell.observed_period_ms,
                cell.distinguishable, len(batch), sum(t.detected_at_us is not None for t in batch),
                len(hits), len(hits) / len(batch), statistics.fmean(lat) / 1000 if lat else math.nan))
            if cell.distinguishable:
                res.total += len(batch)
                res.failures += len(batch) - len(hits)
    return res


# -- app replay ---------------------------------------------------------------

@dataclass(frozen=True)
class DetectionLogRow:
    """One detection event: which app was replayed, where, and what was seen."""

    app: str
    device: str
    sensor: str
    label: str
    onset_us: int
    detected_at_us: int
    registered_at_us: int
    latency_us: int


@dataclass(frozen=True)
class AppRow:
    app: str
    category: str
    combo: str
    detections: int
    candidates: int
    exact: int
    outcome: str  # unique | conflicting | missed
    matched: str


def replay_app(record: fp.AppFingerprint, profiles, cfg: ExperimentConfig, index: int):
    """Replay one app's combo on each profile and pool the detections."""
    seed = cfg.seed ^ index
    pooled, log = [], []
    for profile in profiles:
        engine = Engine(seed)
        stack = SensorStack(profile, engine, cfg.multiplex_policy)
        obs = fp.start_observer(profile, stack=stack, epsilon=cfg.epsilon)
        slowest = max(s.max_period_us for s in get_sensor_list(profile))
        start = 2 * slowest + engine.rng.uniform_int(0, slowest)
        victim = fp.Victim(stack, sorted(record.combo, key=fp._item_key))
        victim.schedule(start)
        dets = fp.attach_registration_times(fp.observe(obs, start + VICTIM_WATCH_US), victim)
        pooled.extend(dets)
        log.extend(DetectionLogRow(record.app_name, profile.name, d.sensor.value, d.label_text(),
                                   d.onset_at, d.detected_at, d.victim_registered_at, d.latency_us)
                   for d in dets)
    return pooled, log


def cmd_fingerprint_apps(cfg: ExperimentConfig, db: fp.FingerprintDb | None = None) -> RunResult:
    if db is None:
        db = fp.load_fingerprint_db(cfg.db)
    profiles = _profiles(cfg)
    res = RunResult([], [])
    for i, record in enumerate(db):
        dets, log = replay_app(record, profiles, cfg, i)
        res.trials.extend(log)
        m = fp.match_apps(db, dets, cfg.epsilon)
        if not dets:
            outcome = "missed"
        elif m.unique and m.best is record:
            outcome = "unique"
        else:
            outcome = "conflicting"
        res.rows.append(AppRow(record.app_name, record.category, record.combo_text(),
                               len(fp.detection_items(dets)), len(m.candidates), len(m.exact), outcome,
                               ";".join(r.app_name for r in m.exact)))
    res.total = len(res.rows)
    res.failures = sum(r.outcome == "missed" for r in res.rows)
    return res


def app_summary(rows: Iterable[AppRow]) -> dict[str, int]:
    out = {"unique": 0, "conflicting": 0, "missed": 0}
    for r in rows:
        out[r.outcome] += 1
    out["detected"] = out["unique"] + out["conflicting"]
    return out


# -- jitter profile -----------------------------------------------------------

@dataclass(frozen=True)
class JitterRow:
    device: str
    sensor: str
    request_class: str
    requested_us: int
    period_us: int
    samples: int
    mean_gap_us: float
    std_gap_us: float
    relative_std: float
    band_lo_us: int
    band_hi_us: int
    violations: int
    drops: int


def class_requests(spec) -> dict[str, int]:
    """One representative request per class: faster than min, inside, slower than max."""
    return {
        "fast": max(1, spec.min_period_us // 2),
        "in_range": round(math.sqrt(spec.min_period_us * spec.max_period_us)),
        "slow": 2 * spec.max_period_us,
    }


def sample_gaps(profile, sensor: SensorType, request_us: int, n: int, seed: int,
                policy: MultiplexPolicy | None = None) -> tuple[list[int], int]:
    """``n`` gaps between consecutively generated events, plus the drop count.

    Gaps spanning a dropped event are excluded; a drop is lost data, not a
    longer sampling interval.
    """
    engine = Engine(seed)
    stack = SensorStack(profile, engine, policy or MultiplexPolicy.parse("max"))
    seen: list[tuple[int, int]] = []
    stack.register_listener("probe", sensor, request_us, lambda ev: seen.append((ev.seq, ev.timestamp)))
    period = stack.effective_period(sensor)
    gaps, drops, i = [], 0, 1
    while len(gaps) < n:
        engine.run_until(engine.now + period * (n - len(gaps) + 8))
        for (s0, t0), (s1, t1) in zip(seen[i - 1:], seen[i:]):
            if s1 == s0 + 1:
                gaps.append(t1 - t0)
            else:
                drops += s1 - s0 - 1
        i = len(seen)
    return gaps[:n], drops


def cmd_jitter_profile(cfg: ExperimentConfig) -> RunResult:
    res = RunResult([], [])
    for profile in _profiles(cfg):
        for spec in get_sensor_list(profile):
            if not cfg.wants(spec.sensor):
                continue
            for j, (cls, req) in enumerate(class_requests(spec).items()):
                gaps, drops = sample_gaps(profile, spec.sensor, req, cfg.samples, cfg.seed ^ j)
                lo, hi = batching_band(spec, req)
                mean = statistics.fmean(gaps)
                std = statistics.pstdev(gaps)
                bad = sum(not lo <= g <= hi for g in gaps)
                res.rows.append(JitterRow(profile.name, spec.sensor.value, cls, req, clamp_request(spec, req),
                                          len(gaps), mean, std, std / mean, lo, hi, bad, drops))
                res.total += len(gaps)
                res.failures += bad
    return res


RUNNERS = {
    "sweep": cmd_channel_sweep,
    "constants": cmd_fingerprint_constants,
    "apps": cmd_fingerprint_apps,
    "jitter": cmd_jitter_profile,
}


def run(cfg: ExperimentConfig) -> RunResult:
    return RUNNERS[cfg.kind](cfg)


# -- output -------------------------------------------------------------------

def _cell(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    if v is None:
        return ""
    return str(v)


def to_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(rows[0])])
    for r in rows:
        w.writerow([_cell(getattr(r, f.name)) for f in fields(r)])
    return buf.getvalue()


def trials_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".trials" + out.suffix)


def write_result(res: RunResult, out: str | Path) -> tuple[Path, Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_csv(res.rows))
    raw = trials_path(out)
    raw.write_text(to_csv(res.trials))
    return out, raw


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
