"""Shared domain types: sensor samples, label sets, and the hardware profile."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

ACCEL_FULL_SCALE_G = 16.0
GYRO_FULL_SCALE_DPS = 2000.0

# Canonical channel order used by the CSV format and the feature pipeline.
ACCEL_CHANNELS = ("ax", "ay", "az")
GYRO_CHANNELS = ("gx", "gy", "gz")
STRETCH_CHANNEL = ("stretch",)
ALL_CHANNELS = ACCEL_CHANNELS + GYRO_CHANNELS + STRETCH_CHANNEL


class ActivityLabel(Enum):
    """Activity classes, in stable declaration order (integer codes 0..6)."""

    Drive = 0
    Jump = 1
    LieDown = 2
    Sit = 3
    Stand = 4
    Walk = 5
    Transition = 6

    @property
    def display_name(self) -> str:
        return _ACTIVITY_DISPLAY[self]


_ACTIVITY_DISPLAY = {
    ActivityLabel.Drive: "Drive",
    ActivityLabel.Jump: "Jump",
    ActivityLabel.LieDown: "Lie Down",
    ActivityLabel.Sit: "Sit",
    ActivityLabel.Stand: "Stand",
    ActivityLabel.Walk: "Walk",
    ActivityLabel.Transition: "Transitions",
}


class GestureLabel(Enum):
    """Gesture classes, in stable declaration order (integer codes 0..3)."""

    Up = 0
    Down = 1
    Left = 2
    Right = 3

    @property
    def display_name(self) -> str:
        return self.name


Label = Union[ActivityLabel, GestureLabel]


def encode_label(label: Label) -> int:
    """Stable integer class index of a label."""
    if not isinstance(label, (ActivityLabel, GestureLabel)):
        raise TypeError(f"not a label: {label!r}")
    return label.value


def decode_label(label_set: type, index: int) -> Label:
    """Inverse of encode_label for the given label enumeration."""
    try:
        return label_set(index)
    except ValueError:
        raise ValueError(f"no {label_set.__name__} with index {index}") from None


def label_set_for(name: str) -> type:
    """Label enumeration for an application name ('har' or 'gesture')."""
    if name == "har":
        return ActivityLabel
    if name == "gesture":
        return GestureLabel
    raise ValueError(f"unknown application {name!r} (expected 'har' or 'gesture')")


def parse_label(text: str) -> Label:
    """Resolve a label name from either enumeration. Activity names win ties (none exist)."""
    for enum_cls in (ActivityLabel, GestureLabel):
        try:
            return enum_cls[text]
        except KeyError:
            continue
    raise ValueError(f"unknown label name {text!r}")


@dataclass(frozen=True)
class SensorSample:
    """One timestamped motion reading.

    accel is in g, gyro in degrees/second, stretch normalized to [0,1]
    (None for recordings without the knee-sleeve channel).
    """

    t_ms: int
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]
    stretch: float | None = None

    def validate(self) -> None:
        for v in self.accel:
            if not math.isfinite(v) or abs(v) > ACCEL_FULL_SCALE_G:
                raise ValueError(f"accel component {v} outside +/-{ACCEL_FULL_SCALE_G} g")
        for v in self.gyro:
            if not math.isfinite(v) or abs(v) > GYRO_FULL_SCALE_DPS:
                raise ValueError(f"gyro component {v} outside +/-{GYRO_FULL_SCALE_DPS} dps")
        if self.stretch is not None and not (0.0 <= self.stretch <= 1.0):
            raise ValueError(f"stretch {self.stretch} outside [0,1]")

    def channel_values(self) -> tuple[float, ...]:
        base = self.accel + self.gyro
        return base + (self.stretch,) if self.stretch is not None else base


@dataclass(frozen=True)
class DeviceProfile:
    """Hardware budget constants for the wearable node.

    The default CPU, SRAM, flash and active-power numbers model the shipped
    47 MHz Cortex-M3 part with 20 KB SRAM / 128 KB flash; sleep and transmit
    power are order-of-magnitude defaults for that MCU class and are meant
    to be overridden from config when better numbers are known.
    """

    cpu_mhz: float = 47.0
    sram_bytes: int = 20480
    flash_bytes: int = 131072
    p_active_har_mw: float = 12.5
    p_active_gesture_mw: float = 10.0
    p_sleep_mw: float = 0.3
    p_tx_mw: float = 15.0
    sample_rate_hz: float = 100.0

    def __post_init__(self) -> None:
        for name in ("cpu_mhz", "p_active_har_mw", "p_active_gesture_mw",
                     "p_sleep_mw", "p_tx_mw", "sample_rate_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.sram_bytes <= 0 or self.flash_bytes <= 0:
            raise ValueError("memory budgets must be > 0")

    def active_power_mw(self, app: str) -> float:
        if app == "har":
            return self.p_active_har_mw
        if app == "gesture":
            return self.p_active_gesture_mw
        raise ValueError(f"unknown application {app!r}")


@dataclass(frozen=True)
class Annotation:
    """Half-open labeled interval [start_ms, end_ms) over a recording."""

    start_ms: int
    end_ms: int
    label: Label

    def __post_init__(self) -> None:
        if self.end_ms <= self.start_ms:
            raise ValueError(f"empty annotation interval [{self.start_ms}, {self.end_ms})")

    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass
class LabeledRecording:
    """An ordered sensor recording plus its non-overlapping label intervals."""

    samples: list[SensorSample]
    annotations: list[Annotation] = field(default_factory=list)
    subject_id: str = ""
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        prev_t = None
        has_stretch = None
        for i, s in enumerate(self.samples):
            s.validate()
            if prev_t is not None and s.t_ms <= prev_t:
                raise ValueError(f"t_ms not strictly increasing at sample {i} ({s.t_ms} after {prev_t})")
            prev_t = s.t_ms
            present = s.stretch is not None
            if has_stretch is None:
                has_stretch = present
            elif present != has_stretch:
                raise ValueError(f"stretch channel present for some samples but not sample {i}")
        ordered = sorted(self.annotations, key=lambda a: a.start_ms)
        for a, b in zip(ordered, ordered[1:]):
            if b.start_ms < a.end_ms:
                raise ValueError(f"overlapping annotations at {b.start_ms} ms")
        if self.samples and ordered:
            lo, hi = self.samples[0].t_ms, self.samples[-1].t_ms
            if ordered[0].start_ms < lo or ordered[-1].end_ms > hi + 1:
                raise ValueError("annotation interval outside sample time range")
        kinds = {type(a.label) for a in self.annotations}
        if len(kinds) > 1:
            raise ValueError("annotations mix activity and gesture labels")

    @property
    def has_stretch(self) -> bool:
        return bool(self.samples) and self.samples[0].stretch is not None

    @property
    def channel_names(self) -> tuple[str, ...]:
        return ALL_CHANNELS if self.has_stretch else ACCEL_CHANNELS + GYRO_CHANNELS

    def label_at(self, t_ms: int) -> Label | None:
        for a in self.annotations:
            if a.start_ms <= t_ms < a.end_ms:
                return a.label
        return None

    def duration_ms(self) -> int:
        if not self.samples:
            return 0
        return self.samples[-1].t_ms - self.samples[0].t_ms
