"""Sampling-rate fingerprinting of victim apps by a slow-carrier observer.

The observer holds one listener per supported sensor at that sensor's
slowest period. A victim registering a faster rate on the same sensor drags
the shared stream up to its rate; the observer classifies the new period
against the device's measured SDK-constant periods, or reports it raw.
"""
from __future__ import annotations

import logging
import statistics
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .inference import (
    DEFAULT_CONFIRM,
    DEFAULT_EPSILON,
    DEFAULT_WINDOW,
    BandSet,
    infer_period,
    within,
)
from .sensorstack import (
    MAX_FREQUENCY,
    DeviceProfile,
    MultiplexPolicy,
    SensorEvent,
    SensorSpec,
    SensorStack,
    SensorType,
    StackError,
    clamp_request,
    get_sensor_list,
)
from .simcore import Engine

log = logging.getLogger(__name__)

CARRIER = "carrier"


class SdkConstant(str, Enum):
    FASTEST = "FASTEST"
    GAME = "GAME"
    UI = "UI"
    NORMAL = "NORMAL"

    @property
    def nominal_us(self) -> int | None:
        return {"FASTEST": None, "GAME": 20000, "UI": 60000, "NORMAL": 200000}[self.value]


CONSTANTS = list(SdkConstant)
Label = Union[SdkConstant, int]  # SDK constant or raw period in µs


class FingerprintError(Exception):
    pass


class NoSensors(FingerprintError):
    pass


class ParseError(FingerprintError):
    pass


class SchemaViolation(FingerprintError):
    pass


def constant_request_us(profile: DeviceProfile, sensor, constant: SdkConstant) -> int:
    """Period the framework requests for ``constant`` on this device."""
    spec = profile.spec(sensor)
    if SdkConstant(constant) is SdkConstant.FASTEST:
        return spec.min_period_us
    return profile.sdk_periods[SdkConstant(constant).value]


def _separated(a: float, b: float, eps: float) -> bool:
    lo, hi = sorted((a, b))
    return hi * (1 - eps) > lo * (1 + eps)


def observer_bands(spec: SensorSpec, epsilon: float = DEFAULT_EPSILON) -> BandSet:
    """Carrier band plus every measured constant that band-separates from it."""
    bands = {CARRIER: spec.max_period_us}
    for name, period in spec.observed_constants.items():
        if _separated(period, spec.max_period_us, epsilon):
            bands[name] = period
    return BandSet.from_mapping(bands, epsilon)


def distinguishable(profile: DeviceProfile, sensor, constant: SdkConstant,
                    epsilon: float = DEFAULT_EPSILON) -> bool:
    """Whether a victim using ``constant`` is identifiable against the carrier.

    The measured period must separate from the carrier, and the period the
    device delivers for that request must fall in the constant's own band.
    """
    spec = profile.spec(sensor)
    constant = SdkConstant(constant)
    observed = spec.observed_constants.get(constant.value)
    if observed is None or not _separated(observed, spec.max_period_us, epsilon):
        return False
    delivered = clamp_request(spec, constant_request_us(profile, sensor, constant))
    return observer_bands(spec, epsilon).classify(delivered) == constant.value


@dataclass(frozen=True)
class ConstantCell:
    device: str
    sensor: SensorType
    constant: SdkConstant
    observed_period_ms: float
    distinguishable: bool


def observed_constant_table(profile: DeviceProfile, epsilon: float = DEFAULT_EPSILON) -> list[ConstantCell]:
    cells = []
    for spec in get_sensor_list(profile):
        for c in CONSTANTS:
            if c.value in spec.observed_constants:
                cells.append(ConstantCell(profile.name, spec.sensor, c,
                                          spec.observed_constants[c.value] / 1000,
                                          distinguishable(profile, spec.sensor, c, epsilon)))
    return cells


# -- observer -----------------------------------------------------------------

@dataclass(frozen=True)
class DetectionEvent:
    sensor: SensorType
    label: Label
    onset_at: int  # closing time of the first gap of the confirming run
    detected_at: int
    victim_registered_at: int | None = None

    @property
    def latency_us(self) -> int | None:
        if self.victim_registered_at is None:
            return None
        return self.detected_at - self.victim_registered_at

    def label_text(self) -> str:
        return self.label.value if isinstance(self.label, SdkConstant) else f"{self.label}us"


class _SensorTracker:
    def __init__(self, sensor: SensorType, bands: BandSet, confirm: int, window: int):
        self.sensor = sensor
        self.carrier = bands.center(CARRIER)
        self.bands = bands
        self.eps = bands.epsilon
        self.confirm = confirm
        self.window: deque[int] = deque(maxlen=window)
        self.stable: str | int = CARRIER
        self.prev: int | None = None
        self._band: str | None = None
        self._band_n = 0
        self._band_at = 0
        self._raw: list[int] = []
        self._raw_at = 0

    def feed(self, t: int) -> tuple[str | int, int] | None:
        prev, self.prev = self.prev, t
        if prev is None:
            return None
        gap = t - prev
        self.window.append(gap)
        label = self.bands.classify(gap)
        if label is not None:
            self._raw = []
            if label == self.stable:
                self._band, self._band_n = None, 0
                return None
            if label != self._band:
                self._band, self._band_n, self._band_at = label, 0, t
            self._band_n += 1
            if self._band_n >= self.confirm:
                return self._settle(label, self._band_at)
            return None
        # out-of-band gap: candidate for a non-standard raw rate
        if self._raw and within(gap, self._raw[0], self.eps):
            self._raw.append(gap)
        else:
            self._raw, self._raw_at = [gap], t
        if len(self._raw) >= self.confirm:
            period = round(infer_period(self._raw).period_us)
            # a raw rate must clear the carrier band, or carrier jitter tails would qualify
            if not _separated(period, self.carrier, self.eps) or (
                    isinstance(self.stable, int) and within(period, self.stable, self.eps)):
                self._raw = []
                return None
            return self._settle(period, self._raw_at)
        return None

    def _settle(self, label, onset):
        self._band, self._band_n, self._raw = None, 0, []
        previous, self.stable = self.stable, label
        return (label, onset) if previous == CARRIER else None

    def estimate(self):
        return infer_period(list(self.window)) if self.window else None


class Observer:
    """Malicious app listening on every supported sensor at its slowest rate."""

    def __init__(self, stack: SensorStack, epsilon: float = DEFAULT_EPSILON,
                 confirm: int = DEFAULT_CONFIRM, window: int = DEFAULT_WINDOW, app_id: str = "observer",
                 sensors: Iterable[SensorType] | None = None):
        specs = get_sensor_list(stack.profile)
        if sensors is not None:
            wanted = {SensorType(s) for s in sensors}
            specs = [s for s in specs if s.sensor in wanted]
        if not specs:
            raise NoSensors(f"profile {stack.profile.name!r} exposes no supported sensors")
        self.stack = stack
        self.detections: list[DetectionEvent] = []
        self.trackers: dict[SensorType, _SensorTracker] = {}
        self.handles = {}
        for spec in specs:
            tracker = _SensorTracker(spec.sensor, observer_bands(spec, epsilon), confirm, window)
            self.trackers[spec.sensor] = tracker
            self.handles[spec.sensor] = stack.register_listener(
                app_id, spec.sensor, spec.max_period_us, self._callback(tracker))

    def _callback(self, tracker: _SensorTracker):
        def on_event(ev: SensorEvent) -> None:
            hit = tracker.feed(ev.timestamp)
            if hit is not None:
                label, onset = hit
                label = SdkConstant(label) if isinstance(label, str) else label
                self.detections.append(DetectionEvent(tracker.sensor, label, onset, ev.timestamp))
        return on_event

    def carrier_periods(self) -> dict[SensorType, int]:
        return {s: self.stack.effective_period(s, h) for s, h in self.handles.items()}

    def stop(self) -> None:
        for h in self.handles.values():
            self.stack.unregister_listener(h)
        self.handles = {}


def start_observer(profile: DeviceProfile, policy: MultiplexPolicy = MAX_FREQUENCY, seed: int = 0,
                   stack: SensorStack | None = None, **kw) -> Observer:
    if stack is None:
        stack = SensorStack(profile, Engine(seed), policy)
    return Observer(stack, **kw)


def observe(observer: Observer, horizon: int) -> list[DetectionEvent]:
    observer.stack.engine.run_until(horizon)
    return list(observer.detections)


# -- victims ------------------------------------------------------------------

@dataclass
class Victim:
    """Scripted app: registers its combo at ``start`` and leaves after ``dwell``."""

    stack: SensorStack
    combo: list[tuple[SensorType, Union[SdkConstant, int]]]
    app_id: str = "victim"
    registered_at: dict[SensorType, int] = field(default_factory=dict)
    skipped: list[SensorType] = field(default_factory=list)

    def schedule(self, start: int, dwell: int = 5_000_000) -> None:
        eng = self.stack.engine
        eng.schedule_at(start, lambda ev: self._register())
        eng.schedule_at(start + dwell, lambda ev: self._leave())
        self._handles = []

    def _register(self) -> None:
        prof = self.stack.profile
        for sensor, rate in self.combo:
            if not prof.supports(sensor):
                self.skipped.append(sensor)
                continue
            period = constant_request_us(prof, sensor, rate) if isinstance(rate, SdkConstant) else int(rate)
            self._handles.append(self.stack.register_listener(self.app_id, sensor, period))
            self.registered_at[SensorType(sensor)] = self.stack.engine.now

    def _leave(self) -> None:
        for h in self._handles:
            try:
                self.stack.unregister_listener(h)
            except StackError:
                pass
        self._handles = []


def attach_registration_times(detections: Iterable[DetectionEvent], victim: Victim) -> list[DetectionEvent]:
    out = []
    for d in detections:
        reg = victim.registered_at.get(d.sensor)
        out.append(DetectionEvent(d.sensor, d.label, d.onset_at, d.detected_at, reg))
    return out


# -- app database -------------------------------------------------------------

ComboItem = tuple[SensorType, Union[SdkConstant, int]]


@dataclass(frozen=True)
class AppFingerprint:
    app_name: str
    category: str
    subcategory: str
    combo: frozenset
    unique: bool
    marked_unique: bool | None = None

    def combo_text(self) -> str:
        return " ".join(_item_text(i) for i in sorted(self.combo, key=_item_key))


def _item_key(item: ComboItem):
    s, r = item
    return (list(SensorType).index(s), isinstance(r, int), r if isinstance(r, int) else CONSTANTS.index(r))


def _item_text(item: ComboItem) -> str:
    s, r = item
    return f"{s.value}:{r.value if isinstance(r, SdkConstant) else f'{r // 1000}ms'}"


def parse_combo_item(text: str) -> ComboItem:
    try:
        sensor, rate = text.strip().split(":")
        sensor = SensorType(sensor.strip().upper())
    except ValueError:
        raise SchemaViolation(f"bad combo entry {text!r}; expected SENSOR:CONSTANT or SENSOR:<n>ms") from None
    rate = rate.strip()
    if rate.upper() in SdkConstant.__members__:
        return sensor, SdkConstant(rate.upper())
    if rate.endswith("ms"):
        try:
            return sensor, round(float(rate[:-2]) * 1000)
        except ValueError:
            pass
    raise SchemaViolation(f"bad rate in combo entry {text!r}")


@dataclass
class FingerprintDb:
    records: list[AppFingerprint]
    marking_conflicts: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_name(self, name: str) -> AppFingerprint:
        for r in self.records:
            if r.app_name == name:
                return r
        raise KeyError(name)


def build_db(rows: list[dict], source: str = "<rows>") -> FingerprintDb:
    seen = set()
    parsed = []
    for i, row in enumerate(rows):
        try:
            name, category = row["name"], row["category"]
            combo = frozenset(parse_combo_item(x) for x in row["combo"])
        except KeyError as exc:
            raise SchemaViolation(f"{source}: record {i}: missing {exc.args[0]!r}") from None
        if not combo:
            raise SchemaViolation(f"{source}: {name}: empty combo")
        if name in seen:
            raise SchemaViolation(f"{source}: duplicate app_name {name!r}")
        seen.add(name)
        parsed.append((name, category, row.get("subcategory", ""), combo, row.get("marked_unique")))
    counts: dict[frozenset, int] = {}
    for _, _, _, combo, _ in parsed:
        counts[combo] = counts.get(combo, 0) + 1
    db = FingerprintDb([])
    for name, category, sub, combo, marked in parsed:
        unique = counts[combo] == 1
        if marked is not None and bool(marked) != unique:
            msg = f"{name}: marked {'unique' if marked else 'conflicting'} but combo is {'unique' if unique else 'shared'}"
            db.marking_conflicts.append(msg)
            log.warning("fingerprint db %s: %s", source, msg)
        db.records.append(AppFingerprint(name, category, sub, combo, unique, marked))
    return db


def load_fingerprint_db(path: str | Path | None = None) -> FingerprintDb:
    """Load an app DB (bundled table when ``path`` is None); uniqueness is recomputed."""
    if path is None:
        text = resources.files("sensormux.data").joinpath("apps.toml").read_text()
        source = "apps.toml"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParseError(f"{path}: {exc.strerror}") from None
        source = str(path)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{source}: {exc}") from None
    if doc.get("schema_version") != 1:
        raise SchemaViolation(f"{source}: schema_version must be 1")
    return build_db(doc.get("app", []), source)


def _item_matches(combo_item: ComboItem, det_item: ComboItem, eps: float) -> bool:
    (cs, cr), (ds, dr) = combo_item, det_item
    if cs != ds:
        return False
    if isinstance(cr, SdkConstant) or isinstance(dr, SdkConstant):
        return cr == dr
    return within(dr, cr, eps)


@dataclass(frozen=True)
class MatchResult:
    candidates: tuple[AppFingerprint, ...]
    exact: tuple[AppFingerprint, ...]
    unique: bool

    @property
    def best(self) -> AppFingerprint | None:
        return self.exact[0] if len(self.exact) == 1 else None


def detection_items(detections: Iterable[DetectionEvent | ComboItem]) -> set[ComboItem]:
    items = set()
    for d in detections:
        items.add((d.sensor, d.label) if isinstance(d, DetectionEvent) else (SensorType(d[0]), d[1]))
    return items


def match_apps(db: FingerprintDb, detections: Iterable, epsilon: float = DEFAULT_EPSILON) -> MatchResult:
    """Apps explained by the detections.

    ``candidates``: every combo item is matched by a detection.
    ``exact``: candidates that also account for every detection.
    ``unique`` holds when exactly one exact candidate exists and its combo is
    unique in the database.
    """
    dets = detection_items(detections)
    if not dets:
        return MatchResult((), (), False)
    cands, exact = [], []
    for rec in db:
        if all(any(_item_matches(c, d, epsilon) for d in dets) for c in rec.combo):
            cands.append(rec)
            if all(any(_item_matches(c, d, epsilon) for c in rec.combo) for d in dets):
                exact.append(rec)
    return MatchResult(tuple(cands), tuple(exact), len(exact) == 1 and exact[0].unique)
