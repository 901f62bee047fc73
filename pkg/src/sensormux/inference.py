"""Sampling-period inference from inter-event gaps and tolerance banding."""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

DEFAULT_EPSILON = 0.1
DEFAULT_WINDOW = 3
DEFAULT_CONFIRM = 2


class InferenceError(Exception):
    pass


class EmptyWindow(InferenceError):
    pass


class AmbiguousBands(InferenceError):
    pass


@dataclass(frozen=True)
class PeriodEstimate:
    period_us: float
    window_size: int
    as_of: int = 0


def infer_period(recent_gaps: Sequence[int], as_of: int = 0) -> PeriodEstimate:
    """Median of the gap window; a dropped event only inflates one gap."""
    if not recent_gaps:
        raise EmptyWindow("no gaps to infer a period from")
    return PeriodEstimate(statistics.median(recent_gaps), len(recent_gaps), as_of)


def within(value: float, center: float, epsilon: float) -> bool:
    return abs(value - center) <= epsilon * center


@dataclass(frozen=True)
class BandSet:
    bands: tuple[tuple[str, int], ...]
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(sorted(self.bands, key=lambda b: b[1])))
        labels = [b[0] for b in self.bands]
        if len(set(labels)) != len(labels):
            raise AmbiguousBands(f"duplicate band labels {labels}")
        for (la, ca), (lb, cb) in zip(self.bands, self.bands[1:]):
            if ca * (1 + self.epsilon) >= cb * (1 - self.epsilon):
                raise AmbiguousBands(f"bands {la}@{ca} and {lb}@{cb} overlap at eps={self.epsilon}")

    @classmethod
    def from_mapping(cls, centers: dict, epsilon: float = DEFAULT_EPSILON) -> "BandSet":
        return cls(tuple(centers.items()), epsilon)

    def center(self, label: str) -> int:
        for lab, c in self.bands:
            if lab == label:
                return c
        raise KeyError(label)

    def classify(self, period: float) -> str | None:
        for label, c in self.bands:
            if within(period, c, self.epsilon):
                return label
        return None


def classify_band(est: PeriodEstimate | float, bands: BandSet) -> str | None:
    """Label whose ±ε interval holds the estimate, else ``None`` (no band)."""
    period = est.period_us if isinstance(est, PeriodEstimate) else est
    return bands.classify(period)


@dataclass(frozen=True)
class TransitionEvent:
    label: str
    at: int  # closing timestamp of the first gap of the confirming run
    confirmed_at: int  # closing timestamp of the gap that completed confirmation


class TransitionDetector:
    """Incremental band-transition detector over a gap stream.

    A transition is emitted once ``confirm`` gaps classify into the same band
    that differs from the current stable band. Out-of-band gaps are skipped
    without resetting the count.
    """

    def __init__(self, bands: BandSet, confirm: int = DEFAULT_CONFIRM, stable: str | None = None):
        if confirm < 1:
            raise ValueError("confirm must be >= 1")
        self.bands = bands
        self.confirm = confirm
        self.stable = stable
        self._cand: str | None = None
        self._count = 0
        self._first_at = 0

    def feed(self, gap: int, timestamp: int) -> TransitionEvent | None:
        label = self.bands.classify(gap)
        if label is None:
            return None
        if label == self.stable:
            self._cand, self._count = None, 0
            return None
        if label != self._cand:
            self._cand, self._count, self._first_at = label, 0, timestamp
        self._count += 1
        if self._count >= self.confirm:
            self.stable = label
            self._cand, self._count = None, 0
            return TransitionEvent(label, self._first_at, timestamp)
        return None


def detect_transition(timestamps: Iterable[int], bands: BandSet, confirm: int = DEFAULT_CONFIRM,
                      stable: str | None = None) -> list[TransitionEvent]:
    """All confirmed transitions in a timestamp stream."""
    det = TransitionDetector(bands, confirm, stable)
    out = []
    prev = None
    for t in timestamps:
        if prev is not None:
            ev = det.feed(t - prev, t)
            if ev is not None:
                out.append(ev)
        prev = t
    return out
