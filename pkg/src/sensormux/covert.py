"""FSK covert channel over a multiplexed sensor stream.

The receiver holds a slow carrier listener. The transmitter signals with
faster listeners: a sync period opens the frame, the mark period is held for
one pulse width per ``1`` bit (no listener for a ``0``), and an end period
closes the frame. Band periods must satisfy ``end < sync < mark < carrier``.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .inference import DEFAULT_CONFIRM, DEFAULT_EPSILON, AmbiguousBands, BandSet, TransitionDetector
from .simcore import Engine
from .sensorstack import (
    MAX_FREQUENCY,
    DeviceProfile,
    MultiplexPolicy,
    SensorEvent,
    SensorSpec,
    SensorStack,
    SensorType,
    clamp_request,
)

PULSE_FLOOR_CARRIERS = 4
DEFAULT_PULSE_GRID_MS = (25, 50, 75, 100, 150, 200, 250, 300, 350)
LABELS = ("carrier", "mark", "sync", "end")


class ChannelError(Exception):
    pass


class HierarchyViolation(ChannelError):
    pass


class BandOverlap(ChannelError):
    pass


class OutOfRange(ChannelError):
    pass


class PulseTooShort(ChannelError):
    pass


class Timeout(ChannelError):
    pass


class ChannelFailure(ChannelError):
    def __init__(self, cause: Exception, sent: str = "", received: str = ""):
        super().__init__(str(cause))
        self.cause = cause
        self.sent = sent
        self.received = received


@dataclass(frozen=True)
class ChannelParams:
    sensor: SensorType
    carrier_us: int
    mark_us: int
    sync_us: int
    end_us: int
    pulse_width_us: int
    epsilon: float = DEFAULT_EPSILON
    sync_hold_us: int | None = None  # defaults to two pulse widths

    @property
    def hold_us(self) -> int:
        return self.sync_hold_us if self.sync_hold_us is not None else 2 * self.pulse_width_us

    def periods(self) -> dict[str, int]:
        return {"carrier": self.carrier_us, "mark": self.mark_us, "sync": self.sync_us, "end": self.end_us}

    def with_pulse(self, pulse_width_us: int) -> "ChannelParams":
        from dataclasses import replace

        return replace(self, pulse_width_us=int(pulse_width_us))


def validate_params(params: ChannelParams, spec: SensorSpec) -> None:
    """Raise unless ``params`` form a decodable frame on ``spec``."""
    if not params.end_us < params.sync_us < params.mark_us < params.carrier_us:
        raise HierarchyViolation(
            f"need end < sync < mark < carrier, got {params.end_us}/{params.sync_us}/"
            f"{params.mark_us}/{params.carrier_us}"
        )
    lo, hi = spec.min_period_us * 0.9, spec.max_period_us * 1.1
    for label, period in params.periods().items():
        if not lo <= period <= hi:
            raise OutOfRange(f"{label} period {period} outside [{lo:g}, {hi:g}]")
    try:
        BandSet.from_mapping(params.periods(), params.epsilon)
    except AmbiguousBands as exc:
        raise BandOverlap(str(exc)) from None
    if params.pulse_width_us < PULSE_FLOOR_CARRIERS * params.carrier_us:
        raise PulseTooShort(
            f"pulse width {params.pulse_width_us} < {PULSE_FLOOR_CARRIERS} x carrier {params.carrier_us}"
        )


def receiver_bands(params: ChannelParams, spec: SensorSpec) -> BandSet:
    """Bands centred on the periods the device actually delivers for each request."""
    centers = {label: clamp_request(spec, p) for label, p in params.periods().items()}
    try:
        return BandSet.from_mapping(centers, params.epsilon)
    except AmbiguousBands as exc:
        raise BandOverlap(f"delivered periods collide on this device: {exc}") from None


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance (unit-cost insert/delete/substitute)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


# -- transmitter --------------------------------------------------------------

class TxState(Enum):
    IDLE = "idle"
    SYNCING = "syncing"
    SENDING = "sending"
    ENDING = "ending"
    DONE = "done"


class Transmitter:
    def __init__(self, stack: SensorStack, params: ChannelParams, bits: str, app_id: str = "trn"):
        if set(bits) - {"0", "1"}:
            raise ValueError("bits must be a string of 0/1")
        self.stack = stack
        self.params = params
        self.bits = bits
        self.app_id = app_id
        self.state = TxState.IDLE
        self.bit_index = -1
        self.trace: list[tuple[int, str, int]] = []
        self.start: int | None = None
        self._handle = None

    def _set(self, period: int | None) -> None:
        now = self.stack.engine.now
        if self._handle is not None and (period is None or self._handle.requested_period_us != period):
            self.trace.append((now, "off", self._handle.requested_period_us))
            self.stack.unregister_listener(self._handle)
            self._handle = None
        if period is not None and self._handle is None:
            self._handle = self.stack.register_listener(self.app_id, self.params.sensor, period)
            self.trace.append((now, "on", period))

    def start_at(self, t: int) -> None:
        p = self.params
        eng = self.stack.engine
        eng.schedule_at(t, lambda ev: self._begin())
        data_at = t + p.hold_us
        for i, bit in enumerate(self.bits):
            eng.schedule_at(data_at + i * p.pulse_width_us, self._send_bit, i)
        end_at = data_at + len(self.bits) * p.pulse_width_us
        eng.schedule_at(end_at, lambda ev: self._finish())
        eng.schedule_at(end_at + p.hold_us, lambda ev: self._done())

    def _begin(self) -> None:
        self.start = self.stack.engine.now
        self.state = TxState.SYNCING
        self._set(self.params.sync_us)

    def _send_bit(self, ev) -> None:
        self.state = TxState.SENDING
        self.bit_index = ev.payload
        self._set(self.params.mark_us if self.bits[ev.payload] == "1" else None)

    def _finish(self) -> None:
        self.state = TxState.ENDING
        self._set(None)
        self._set(self.params.end_us)

    def _done(self) -> None:
        self._set(None)
        self.state = TxState.DONE


def transmit(bits: str, params: ChannelParams, stack: SensorStack, start_at: int | None = None,
             app_id: str = "trn") -> Transmitter:
    """Schedule a full frame on ``stack``; returns the transmitter (its trace fills as it runs)."""
    tx = Transmitter(stack, params, bits, app_id)
    tx.start_at(stack.engine.now if start_at is None else start_at)
    return tx


# -- receiver -----------------------------------------------------------------

class RxState(Enum):
    LISTENING = "listening"
    SYNCED = "synced"
    RECEIVING = "receiving"
    COMPLETE = "complete"


@dataclass
class RxOutcome:
    bits: str
    start: int | None
    end: int | None
    complete: bool


class Receiver:
    """Carrier listener that decodes frames from observed gaps.

    Bits are decided by majority vote of band labels over pulse-width windows
    anchored at the last sync event; window width is re-estimated from the
    frame length between sync departure and end onset.
    """

    def __init__(self, stack: SensorStack, params: ChannelParams, bands: BandSet | None = None,
                 confirm: int = DEFAULT_CONFIRM, app_id: str = "recv"):
        self.stack = stack
        self.params = params
        spec = stack.profile.spec(params.sensor)
        self.bands = bands if bands is not None else receiver_bands(params, spec)
        self.detector = TransitionDetector(self.bands, confirm, stable="carrier")
        self.state = RxState.LISTENING
        self.buffer = ""
        self.synced_at: int | None = None
        self.end: int | None = None
        self.done = False
        self._prev: int | None = None
        self._last_sync: int | None = None
        self._anchor: int | None = None
        self._gaps: list[tuple[int, int, str | None]] = []
        self.handle = stack.register_listener(app_id, params.sensor, params.carrier_us, self._on_event)

    def _on_event(self, ev: SensorEvent) -> None:
        t = ev.timestamp
        prev, self._prev = self._prev, t
        if prev is None or self.done:
            return
        gap = t - prev
        label = self.bands.classify(gap)
        trans = self.detector.feed(gap, t)
        state = self.state
        if state is RxState.LISTENING:
            if trans is not None and trans.label == "sync":
                self.state = RxState.SYNCED
                self.synced_at = trans.at
                self._last_sync = t
                self._gaps = []
        elif state is RxState.SYNCED:
            if label == "sync":
                self._last_sync = t
                self._gaps = []
            else:
                self._gaps.append((t, gap, label))
            if trans is not None and trans.label != "sync":
                self._anchor = self._last_sync
                self.state = RxState.RECEIVING
                if trans.label == "end":
                    self._complete(trans.at)
        elif state is RxState.RECEIVING:
            self._gaps.append((t, gap, label))
            if trans is not None and trans.label == "end":
                self._complete(trans.at)
        elif trans is not None and trans.label != "end":
            self.end = trans.at
            self.done = True

    def _complete(self, end_run_at: int) -> None:
        onset = next(t - g for t, g, _ in self._gaps if t == end_run_at)
        self.buffer = self._decode(self._anchor, onset)
        self.state = RxState.COMPLETE
        self._gaps = []

    def _decode(self, anchor: int, onset: int) -> str:
        w = self.params.pulse_width_us
        n = round((onset - anchor) / w)
        if n <= 0:
            return ""
        width = (onset - anchor) / n
        windows: list[list[tuple[int, str | None]]] = [[] for _ in range(n)]
        for t, gap, label in self._gaps:
            if t > onset:
                break
            i = math.floor((t - gap / 2 - anchor) / width)
            if 0 <= i < n:
                windows[i].append((gap, label))
        split = math.sqrt(self.bands.center("mark") * self.bands.center("carrier"))
        bits = []
        for win in windows:
            ones = sum(1 for _, lab in win if lab == "mark")
            zeros = sum(1 for _, lab in win if lab == "carrier")
            if ones != zeros:
                bits.append("1" if ones > zeros else "0")
            elif win:
                bits.append("1" if statistics.median(g for g, _ in win) < split else "0")
            else:
                bits.append("0")
        return "".join(bits)

    def outcome(self) -> RxOutcome:
        return RxOutcome(self.buffer, self.synced_at, self.end, self.state is RxState.COMPLETE)


def receive(params: ChannelParams, stack: SensorStack, horizon: int, **kw) -> RxOutcome:
    """Run a fresh receiver on ``stack`` until its frame completes or ``horizon``."""
    rx = Receiver(stack, params, **kw)
    _run(stack.engine, [rx], horizon)
    if rx.state is not RxState.COMPLETE:
        raise Timeout(_timeout_reason(rx))
    return rx.outcome()


def _timeout_reason(rx: Receiver) -> str:
    if rx.state is RxState.LISTENING:
        return "no sync observed before horizon (transmitter dead or channel blocked)"
    return f"frame not terminated before horizon (receiver stuck in {rx.state.value})"


def _run(engine: Engine, receivers: list[Receiver], horizon: int, step: int = 100_000) -> None:
    while engine.now < horizon and not all(r.done for r in receivers):
        engine.run_until(min(horizon, engine.now + step))


# -- whole-channel run --------------------------------------------------------

@dataclass(frozen=True)
class TransmissionReport:
    sent: str
    received: str
    edit_distance: int
    start: int
    end: int
    bit_rate_bps: float

    @property
    def duration_us(self) -> int:
        return self.end - self.start


def run_channel(bits: str, params: ChannelParams, profile: DeviceProfile,
                policy: MultiplexPolicy = MAX_FREQUENCY, seed: int = 0, receivers: int = 1,
                return_all: bool = False):
    """Wire a fresh engine and stack, send ``bits`` and measure the result.

    Start time is taken just before the sync registration (transmitter side),
    end time once the receiver sees the post-amble finish.
    """
    spec = profile.spec(params.sensor)
    validate_params(params, spec)
    engine = Engine(seed)
    stack = SensorStack(profile, engine, policy)
    bands = receiver_bands(params, spec)
    rxs = [Receiver(stack, params, bands, app_id=f"recv{i}" if i else "recv") for i in range(receivers)]
    lead = PULSE_FLOOR_CARRIERS * params.carrier_us + engine.rng.uniform_int(0, params.carrier_us)
    tx = transmit(bits, params, stack, start_at=lead)
    frame = 2 * params.hold_us + len(bits) * params.pulse_width_us
    horizon = lead + frame + max(1_000_000, 10 * params.carrier_us)
    _run(engine, rxs, horizon)
    reports = []
    for rx in rxs:
        if rx.state is not RxState.COMPLETE:
            raise ChannelFailure(Timeout(_timeout_reason(rx)), bits, rx.buffer)
        end = rx.end if rx.end is not None else engine.now
        duration = end - tx.start
        rate = len(bits) * 1e6 / duration
        reports.append(TransmissionReport(bits, rx.buffer, edit_distance(bits, rx.buffer), tx.start, end, rate))
    return reports if return_all else reports[0]


# -- parameter tables ---------------------------------------------------------

def load_channel_table(path: str | Path | None = None) -> dict[str, dict[SensorType, dict[str, int]]]:
    """Per-device, per-sensor band periods (µs); bundled table when ``path`` is None."""
    if path is None:
        text = resources.files("sensormux.data").joinpath("channels.toml").read_text()
        source = "channels.toml"
    else:
        text = Path(path).read_text()
        source = str(path)
    doc = tomllib.loads(text)
    if doc.get("schema_version") != 1:
        raise ChannelError(f"{source}: unsupported schema_version {doc.get('schema_version')!r}")
    table: dict[str, dict[SensorType, dict[str, int]]] = {}
    for device, sensors in doc.items():
        if device == "schema_version":
            continue
        table[device] = {}
        for sensor, row in sensors.items():
            try:
                table[device][SensorType(sensor)] = {k: int(row[f"{k}_us"]) for k in LABELS}
            except (KeyError, ValueError) as exc:
                raise ChannelError(f"{source}: {device}.{sensor}: bad or missing field {exc}") from None
    return table


def channel_params(device: str, sensor, pulse_width_us: int, table: Mapping | None = None,
                   epsilon: float = DEFAULT_EPSILON) -> ChannelParams:
    table = table if table is not None else load_channel_table()
    row = table[device][SensorType(sensor)]
    return ChannelParams(SensorType(sensor), row["carrier"], row["mark"], row["sync"], row["end"],
                         int(pulse_width_us), epsilon)
