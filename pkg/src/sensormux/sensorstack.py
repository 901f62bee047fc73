"""Simulated sensor stack: device profiles, request clamping and multiplexing.

Every supported sensor owns one event stream per delivery group. Under the
``max`` policy all listeners of a sensor share one stream running at the
fastest (clamped) request, which is the behaviour both attacks exploit.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .simcore import Engine, SimEvent

PROFILE_SCHEMA_VERSION = 1
RATE_CAP_PERIOD_US = 1_000_000 / 1100  # 1100 Hz ceiling for over-fast requests
BUNDLED_PROFILES = ("poco_f1", "pixel_4a", "moto_g5")


class SensorType(str, Enum):
    AC = "AC"
    GR = "GR"
    GY = "GY"
    LA = "LA"
    MF = "MF"
    RV = "RV"


SENSOR_ORDER = list(SensorType)


class StackError(Exception):
    pass


class UnsupportedSensor(StackError):
    pass


class DuplicateHandle(StackError):
    pass


class UnknownHandle(StackError):
    pass


class NoListeners(StackError):
    pass


class ProfileError(StackError):
    pass


@dataclass(frozen=True)
class ResponseModel:
    """How the HAL maps a clamped request onto a delivered period.

    ``grid`` holds ``(period_us, from_us)`` steps: a request ``r`` is served
    by the step with the largest ``from_us <= r``. A plain grid uses
    ``from_us == period_us``, which snaps to the largest period not above the
    request (over-sampling).
    """

    kind: str = "accurate"  # accurate | step | single
    grid: tuple[tuple[int, int], ...] = ()
    fixed_us: int | None = None

    def __post_init__(self):
        if self.kind == "step":
            if not self.grid:
                raise ProfileError("step response needs a non-empty grid")
            periods = [p for p, _ in self.grid]
            if any(b <= a for a, b in zip(periods, periods[1:])):
                raise ProfileError("step grid must be strictly increasing")
        elif self.kind == "single":
            if not self.fixed_us or self.fixed_us <= 0:
                raise ProfileError("single-frequency response needs fixed_us > 0")
        elif self.kind != "accurate":
            raise ProfileError(f"unknown response kind {self.kind!r}")

    @classmethod
    def step(cls, periods, captures: Mapping[int, int] | None = None) -> "ResponseModel":
        captures = captures or {}
        return cls("step", tuple((int(p), int(captures.get(p, p))) for p in periods))

    @classmethod
    def single(cls, fixed_us: int) -> "ResponseModel":
        return cls("single", fixed_us=int(fixed_us))

    def apply(self, base_us: int) -> int:
        if self.kind == "accurate":
            return base_us
        if self.kind == "single":
            return self.fixed_us
        best = None
        for period, start in self.grid:
            if start <= base_us and (best is None or start >= best[1]):
                best = (period, start)
        return best[0] if best else self.grid[0][0]


@dataclass(frozen=True)
class JitterModel:
    relative_sigma: float = 0.0
    drop_base: float = 0.0
    drop_freq_coeff: float = 0.0

    def __post_init__(self):
        if not 0 <= self.relative_sigma < 0.5:
            raise ProfileError("relative_sigma must lie in [0, 0.5)")
        if not (0 <= self.drop_base <= 1 and 0 <= self.drop_freq_coeff <= 1):
            raise ProfileError("drop probabilities must lie in [0, 1]")

    def drop_probability(self, period_us: int) -> float:
        return min(1.0, self.drop_base + self.drop_freq_coeff * 1e6 / period_us)


NOISELESS = JitterModel()


@dataclass(frozen=True)
class SensorSpec:
    sensor: SensorType
    min_period_us: int
    max_period_us: int
    vendor: str = ""
    response: ResponseModel = ResponseModel()
    jitter: JitterModel = NOISELESS
    supported: bool = True
    # measured period (µs) per SDK constant name, used for band construction
    observed_constants: Mapping[str, int] = field(default_factory=dict)
    couples_to: SensorType | None = None

    def __post_init__(self):
        if self.supported:
            if self.min_period_us <= 0:
                raise ProfileError(f"{self.sensor.value}: min_period_us must be > 0")
            if self.min_period_us > self.max_period_us:
                raise ProfileError(f"{self.sensor.value}: min_period_us > max_period_us")
            if self.response.kind == "single":
                lo, hi = self.min_period_us / 1.1, self.max_period_us / 0.9
                if not lo <= self.response.fixed_us <= hi:
                    raise ProfileError(f"{self.sensor.value}: fixed period outside supported range")

    def with_jitter(self, jitter: JitterModel) -> "SensorSpec":
        return replace(self, jitter=jitter)


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    sensors: Mapping[SensorType, SensorSpec]
    display_name: str = ""
    # framework request period per SDK constant (FASTEST maps to min period)
    sdk_periods: Mapping[str, int] = field(
        default_factory=lambda: {"GAME": 20000, "UI": 66667, "NORMAL": 200000}
    )

    def spec(self, sensor: SensorType) -> SensorSpec:
        try:
            spec = self.sensors[SensorType(sensor)]
        except KeyError:
            raise UnsupportedSensor(f"{self.name} has no {SensorType(sensor).value} sensor") from None
        if not spec.supported:
            raise UnsupportedSensor(f"{self.name} does not support {spec.sensor.value}")
        return spec

    def supports(self, sensor: SensorType) -> bool:
        s = self.sensors.get(SensorType(sensor))
        return bool(s and s.supported)

    def noiseless(self) -> "DeviceProfile":
        return self.with_jitter(lambda spec: NOISELESS)

    def with_jitter(self, fn: Callable[[SensorSpec], JitterModel]) -> "DeviceProfile":
        return replace(self, sensors={k: v.with_jitter(fn(v)) for k, v in self.sensors.items()})


def get_sensor_list(profile: DeviceProfile) -> list[SensorSpec]:
    return [profile.sensors[s] for s in SENSOR_ORDER if s in profile.sensors and profile.sensors[s].supported]


# -- clamping -----------------------------------------------------------------

def request_class(spec: SensorSpec, requested_period_us: int) -> tuple[str, int]:
    """Classify a request as ``fast`` / ``in_range`` / ``slow`` with its nominal base."""
    if requested_period_us <= 0:
        raise ValueError("requested period must be > 0")
    if requested_period_us < spec.min_period_us:
        return "fast", max(spec.min_period_us, math.ceil(RATE_CAP_PERIOD_US))
    if requested_period_us > spec.max_period_us:
        return "slow", spec.max_period_us
    return "in_range", requested_period_us


def batching_band(spec: SensorSpec, requested_period_us: int) -> tuple[int, int]:
    """Inclusive period band (µs) the delivered gaps must respect.

    The batching rules are stated in frequency: 90-110% of the limiting
    frequency outside the supported range, 90-220% of the requested frequency
    inside it, and never above 1100 Hz.
    """
    cls, nominal = request_class(spec, requested_period_us)
    lo = nominal / (2.2 if cls == "in_range" else 1.1)
    hi = nominal / 0.9
    lo = max(lo, RATE_CAP_PERIOD_US)
    return math.ceil(lo), math.floor(hi)


def clamp_request(spec: SensorSpec, requested_period_us: int) -> int:
    """Noiseless delivered period for a single request on ``spec``."""
    if not spec.supported:
        raise UnsupportedSensor(f"{spec.sensor.value} is not supported")
    _, base = request_class(spec, requested_period_us)
    lo, hi = batching_band(spec, requested_period_us)
    return min(max(spec.response.apply(base), lo), hi)


# -- policies -----------------------------------------------------------------

@dataclass(frozen=True)
class MultiplexPolicy:
    kind: str = "max"  # max | per-app | quantized
    allowed: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("max", "per-app", "quantized"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == "quantized" and not self.allowed:
            raise ValueError("quantized policy needs allowed periods")

    @classmethod
    def parse(cls, text: str) -> "MultiplexPolicy":
        text = text.strip().lower()
        if text in ("max", "max-frequency", "maxfrequency"):
            return MAX_FREQUENCY
        if text in ("per-app", "perapp", "per-app-enforced"):
            return PER_APP_ENFORCED
        if text == "quantized":
            return QUANTIZED_SDK
        if text.startswith("quantized:"):
            return cls("quantized", tuple(sorted(int(x) for x in text.split(":", 1)[1].split(","))))
        raise ValueError(f"unknown policy {text!r}")

    def __str__(self):
        if self.kind == "quantized":
            return "quantized:" + ",".join(map(str, self.allowed))
        return self.kind

    def quantize(self, period_us: int) -> int:
        slower = [p for p in self.allowed if p >= period_us]
        return min(slower) if slower else max(self.allowed)


MAX_FREQUENCY = MultiplexPolicy("max")
PER_APP_ENFORCED = MultiplexPolicy("per-app")
# OS-chosen rates only: the GAME / UI / NORMAL framework periods.
QUANTIZED_SDK = MultiplexPolicy("quantized", (20000, 66667, 200000))


# -- runtime ------------------------------------------------------------------

@dataclass(frozen=True)
class SensorEvent:
    sensor: SensorType
    timestamp: int
    seq: int


class Dropped:
    def __repr__(self):
        return "DROPPED"


DROPPED = Dropped()


@dataclass(eq=False)
class ListenerHandle:
    app_id: str
    sensor: SensorType
    requested_period_us: int
    registered_at: int
    callback: Callable[[SensorEvent], None] | None = field(default=None, repr=False)
    id: int = 0
    _coupled: "ListenerHandle | None" = field(default=None, repr=False)


def draw_gap(period_us: int, band: tuple[int, int], sigma: float, rng) -> int:
    """One inter-event gap: multiplicative normal noise truncated to ``band``."""
    if sigma == 0:
        return period_us
    lo, hi = band
    for _ in range(1000):
        g = round(period_us * (1.0 + rng.gauss(sigma)))
        if lo <= g <= hi:
            return g
    return min(max(period_us, lo), hi)


class _Stream:
    __slots__ = ("stack", "spec", "listeners", "period", "band", "request",
                 "last_t", "seq", "pending", "drop_p", "gaps", "last_result")

    def __init__(self, stack: "SensorStack", spec: SensorSpec):
        self.stack = stack
        self.spec = spec
        self.listeners: list[ListenerHandle] = []
        self.period = 0
        self.band = (0, 0)
        self.request = 0
        self.last_t: int | None = None
        self.seq = 0
        self.pending: SimEvent | None = None
        self.drop_p = 0.0
        self.last_result = None

    def retune(self, request: int, period: int) -> None:
        now = self.stack.engine.now
        band = batching_band(self.spec, request)
        band = (min(band[0], period), max(band[1], period))
        if self.pending is not None and period == self.period and band == self.band:
            self.request = request
            return
        self.request, self.period, self.band = request, period, band
        self.drop_p = self.spec.jitter.drop_probability(period)
        if self.pending is not None:
            self.pending.cancelled = True
        gap = draw_gap(period, band, self.spec.jitter.relative_sigma, self.stack.engine.rng)
        if self.last_t is None:
            self.last_t = now
        # settle on the new period's grid anchored at the last generated event
        k = max(1, -(-(now - self.last_t) // gap))
        self.pending = self.stack.engine.schedule_at(self.last_t + k * gap, self._fire)

    def halt(self) -> None:
        if self.pending is not None:
            self.pending.cancelled = True
        self.pending = None
        self.last_t = None

    def _fire(self, ev: SimEvent) -> None:
        engine = self.stack.engine
        t = ev.fire_at
        self.seq += 1
        self.last_t = t
        if self.drop_p and engine.rng.random() < self.drop_p:
            self.last_result = DROPPED
        else:
            event = SensorEvent(self.spec.sensor, t, self.seq)
            self.last_result = event
            for h in list(self.listeners):
                if h.callback is not None:
                    h.callback(event)
        gap = draw_gap(self.period, self.band, self.spec.jitter.relative_sigma, engine.rng)
        self.pending = engine.schedule_at(t + gap, self._fire)


class SensorStack:
    """Listener registry and event delivery for one device on one engine."""

    def __init__(self, profile: DeviceProfile, engine: Engine | None = None,
                 policy: MultiplexPolicy = MAX_FREQUENCY):
        self.profile = profile
        self.engine = engine if engine is not None else Engine()
        self.policy = policy
        self._ids = itertools.count(1)
        self._active: dict[int, ListenerHandle] = {}
        self._shared: dict[SensorType, _Stream] = {}
        self._own: dict[int, _Stream] = {}

    # registration ---------------------------------------------------------
    def register_listener(self, app_id: str, sensor, requested_period_us: int,
                          callback: Callable[[SensorEvent], None] | None = None) -> ListenerHandle:
        sensor = SensorType(sensor)
        spec = self.profile.spec(sensor)
        if requested_period_us <= 0:
            raise ValueError("requested period must be > 0")
        if any(h.app_id == app_id and h.sensor == sensor for h in self._active.values()):
            raise DuplicateHandle(f"{app_id} already listens on {sensor.value}")
        h = ListenerHandle(app_id, sensor, int(requested_period_us), self.engine.now, callback, next(self._ids))
        self._active[h.id] = h
        if self.policy.kind == "per-app":
            stream = self._own[h.id] = _Stream(self, spec)
            stream.listeners.append(h)
        else:
            stream = self._shared.setdefault(sensor, _Stream(self, spec))
            stream.listeners.append(h)
        self._recompute(sensor, h)
        if spec.couples_to is not None and self.profile.supports(spec.couples_to):
            h._coupled = self.register_listener(f"{app_id}#{sensor.value}", spec.couples_to, requested_period_us)
        return h

    def unregister_listener(self, handle: ListenerHandle) -> None:
        if self._active.pop(handle.id, None) is None:
            raise UnknownHandle(f"handle {handle.id} is not active")
        if self.policy.kind == "per-app":
            self._own.pop(handle.id).halt()
        else:
            self._shared[handle.sensor].listeners.remove(handle)
            self._recompute(handle.sensor, handle)
        if handle._coupled is not None:
            self.unregister_listener(handle._coupled)
            handle._coupled = None

    def listeners(self, sensor=None) -> list[ListenerHandle]:
        return [h for h in self._active.values() if sensor is None or h.sensor == SensorType(sensor)]

    # periods --------------------------------------------------------------
    def _target(self, spec: SensorSpec, requests: list[int]) -> tuple[int, int]:
        req = min(requests)
        if self.policy.kind == "quantized":
            req = self.policy.quantize(clamp_request(spec, req))
        return req, clamp_request(spec, req)

    def _recompute(self, sensor: SensorType, handle: ListenerHandle) -> None:
        spec = self.profile.spec(sensor)
        if self.policy.kind == "per-app":
            stream = self._own.get(handle.id)
            if stream is not None:
                stream.retune(*self._target(spec, [handle.requested_period_us]))
            return
        stream = self._shared[sensor]
        if not stream.listeners:
            stream.halt()
            return
        stream.retune(*self._target(spec, [h.requested_period_us for h in stream.listeners]))

    def _stream_for(self, sensor, handle: ListenerHandle | None) -> _Stream:
        sensor = SensorType(sensor)
        if self.policy.kind == "per-app":
            if handle is None:
                raise ValueError("per-app policy: effective period is defined per listener handle")
            if handle.id not in self._own:
                raise UnknownHandle(f"handle {handle.id} is not active")
            return self._own[handle.id]
        stream = self._shared.get(sensor)
        if stream is None or not stream.listeners:
            raise NoListeners(f"no listeners on {sensor.value}")
        return stream

    def effective_period(self, sensor, handle: ListenerHandle | None = None) -> int:
        return self._stream_for(sensor, handle).period

    def emit_next(self, sensor, handle: ListenerHandle | None = None):
        """Advance the engine to the next generated event of ``sensor``'s stream.

        Returns the delivered :class:`SensorEvent` or :data:`DROPPED`.
        """
        stream = self._stream_for(sensor, handle)
        seq = stream.seq
        while stream.seq == seq:
            self.engine.run_until(stream.pending.fire_at)
        return stream.last_result


# -- profile files ------------------------------------------------------------

def _parse_response(sensor: str, raw: Mapping, max_period: int) -> ResponseModel:
    kind = raw.get("kind", "accurate")
    if kind == "accurate":
        return ResponseModel()
    if kind == "single":
        return ResponseModel.single(raw["fixed_us"])
    if kind == "step":
        if "quantum_us" in raw:
            q = float(raw["quantum_us"])
            periods = [round(k * q) for k in range(1, int(max_period / q + 1e-9) + 1)]
            return ResponseModel.step(periods)
        periods, captures = [], {}
        for item in raw["grid"]:
            if isinstance(item, list):
                periods.append(int(item[0]))
                captures[int(item[0])] = int(item[1])
            else:
                periods.append(int(item))
        return ResponseModel.step(periods, captures)
    raise ProfileError(f"{sensor}: unknown response kind {kind!r}")


def profile_from_dict(doc: Mapping, source: str = "<dict>") -> DeviceProfile:
    version = doc.get("schema_version")
    if version != PROFILE_SCHEMA_VERSION:
        raise ProfileError(f"{source}: schema_version must be {PROFILE_SCHEMA_VERSION}, got {version!r}")
    try:
        name = doc["name"]
        sensors: dict[SensorType, SensorSpec] = {}
        for key, raw in doc.get("sensors", {}).items():
            where = f"{source}: sensors.{key}"
            try:
                st = SensorType(key)
            except ValueError:
                raise ProfileError(f"{where}: unknown sensor type") from None
            if not raw.get("supported", True):
                sensors[st] = SensorSpec(st, 0, 0, raw.get("vendor", ""), supported=False)
                continue
            jit = raw.get("jitter", {})
            observed = {k: round(float(v) * 1000) for k, v in raw.get("observed_ms", {}).items()}
            couples = raw.get("couples_to")
            max_p = int(raw["max_period_us"])
            sensors[st] = SensorSpec(
                st,
                int(raw["min_period_us"]),
                max_p,
                raw.get("vendor", ""),
                _parse_response(key, raw.get("response", {}), max_p),
                JitterModel(float(jit.get("sigma", 0.0)), float(jit.get("drop_base", 0.0)),
                            float(jit.get("drop_freq_coeff", 0.0))),
                True,
                observed,
                SensorType(couples) if couples else None,
            )
        sdk = {"GAME": 20000, "UI": 66667, "NORMAL": 200000}
        sdk.update({k: int(v) for k, v in doc.get("sdk_periods", {}).items()})
        return DeviceProfile(name, sensors, doc.get("display_name", name), sdk)
    except KeyError as exc:
        raise ProfileError(f"{source}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProfileError):
            raise
        raise ProfileError(f"{source}: {exc}") from None


def load_profile(name_or_path: str | Path) -> DeviceProfile:
    """Load a bundled profile by name (``poco_f1``) or a profile file by path."""
    path = Path(name_or_path)
    if path.suffix != ".toml" and str(name_or_path) in BUNDLED_PROFILES:
        text = resources.files("sensormux.data.profiles").joinpath(f"{name_or_path}.toml").read_text()
        source = f"{name_or_path}.toml"
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ProfileError(f"{path}: {exc.strerror}") from None
        source = str(path)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ProfileError(f"{source}: {exc}") from None
    return profile_from_dict(doc, source)


def bundled_profiles() -> list[DeviceProfile]:
    return [load_profile(n) for n in BUNDLED_PROFILES]
