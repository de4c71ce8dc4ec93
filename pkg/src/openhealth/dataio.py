"""Dataset CSV I/O, the synthetic recording generator, and raw-storage arithmetic.

Dataset files are plain CSV with the fixed header
``t_ms,ax,ay,az,gx,gy,gz,stretch,label``, one row per sample, floats
written with 6 fractional digits. The label column repeats the active
annotation name on every covered row (empty = unlabeled); annotations are
reconstructed from contiguous runs of equal labels, with the interval
convention [first_row_t, last_row_t + 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    Annotation,
    Label,
    LabeledRecording,
    SensorSample,
    parse_label,
)

DATASET_HEADER = "t_ms,ax,ay,az,gx,gy,gz,stretch,label"
FLOAT_DIGITS = 6

# Fixed mixing weights for the synthesized angular-rate channels: limb swing
# mostly about one axis, smaller components on the others.
_GYRO_AXIS_WEIGHTS = np.array([1.0, 0.4, 0.15])
_GYRO_SWING_DPS_PER_G_HZ = 90.0
_GYRO_NOISE_SCALE = 50.0


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


def _fmt(v: float) -> str:
    return f"{v:.{FLOAT_DIGITS}f}"


def write_dataset(recording: LabeledRecording, path: str | Path) -> None:
    """Write a recording as dataset CSV. Invariants are re-checked first."""
    recording.validate()
    path = Path(path)
    lines = [DATASET_HEADER]
    for s in recording.samples:
        label = recording.label_at(s.t_ms)
        stretch = _fmt(s.stretch) if s.stretch is not None else ""
        lines.append(
            f"{s.t_ms},{_fmt(s.accel[0])},{_fmt(s.accel[1])},{_fmt(s.accel[2])},"
            f"{_fmt(s.gyro[0])},{_fmt(s.gyro[1])},{_fmt(s.gyro[2])},"
            f"{stretch},{label.name if label is not None else ''}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path: str | Path) -> LabeledRecording:
    """Parse a dataset CSV back into a LabeledRecording.

    Raises DatasetFormatError naming the 1-based line number on a bad
    header, an unparseable row, or non-monotonic timestamps.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != DATASET_HEADER:
        got = lines[0] if lines else "<empty file>"
        raise DatasetFormatError(f"line 1: bad header {got!r}, expected {DATASET_HEADER!r}")

    samples: list[SensorSample] = []
    row_labels: list[Label | None] = []
    prev_t: int | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise DatasetFormatError(f"line {lineno}: expected 9 columns, got {len(parts)}")
        try:
            t_ms = int(parts[0])
            accel = (float(parts[1]), float(parts[2]), float(parts[3]))
            gyro = (float(parts[4]), float(parts[5]), float(parts[6]))
            stretch = float(parts[7]) if parts[7] != "" else None
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: unparseable value ({exc})") from None
        if any(not np.isfinite(v) for v in accel + gyro):
            raise DatasetFormatError(f"line {lineno}: non-finite value")
        if prev_t is not None and t_ms <= prev_t:
            raise DatasetFormatError(
                f"line {lineno}: t_ms {t_ms} not greater than previous {prev_t}"
            )
        prev_t = t_ms
        label = parse_label(parts[8]) if parts[8] != "" else None
        samples.append(SensorSample(t_ms=t_ms, accel=accel, gyro=gyro, stretch=stretch))
        row_labels.append(label)

    annotations = _annotations_from_rows(samples, row_labels)
    return LabeledRecording(samples=samples, annotations=annotations)


def _annotations_from_rows(
    samples: Sequence[SensorSample], row_labels: Sequence[Label | None]
) -> list[Annotation]:
    annotations: list[Annotation] = []
    run_start: int | None = None
    run_label: Label | None = None
    for i, label in enumerate(row_labels):
        if label != run_label:
            if run_label is not None:
                annotations.append(
                    Annotation(samples[run_start].t_ms, samples[i - 1].t_ms + 1, run_label)
                )
            run_start = i if label is not None else None
            run_label = label
    if run_label is not None:
        annotations.append(
            Annotation(samples[run_start].t_ms, samples[-1].t_ms + 1, run_label)
        )
    return annotations


@dataclass(frozen=True)
class LabelSignalModel:
    """Per-class signal generator parameters.

    The accelerometer rides a unit gravity vector modulated by one periodic
    component; angular rate follows the derivative of that swing with fixed
    axis weights; stretch is a biased sinusoid clipped to [0,1]. A label
    without a stretch channel sets stretch_base to None.
    """

    orientation: tuple[float, float, float]
    freq_hz: float
    amp_g: float
    noise_sigma: float
    stretch_base: float | None = None
    stretch_amp: float = 0.0

    def signature(self) -> tuple:
        return (self.freq_hz, self.amp_g, self.orientation)


@dataclass(frozen=True)
class SyntheticActivityModel:
    """Seeded family of per-label signal generators, separable by construction."""

    signals: Mapping[Label, LabelSignalModel]
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.signals:
            raise ValueError("synthetic model needs at least one label")
        seen: dict[tuple, Label] = {}
        stretch_flags = set()
        for label, sig in self.signals.items():
            key = sig.signature()
            if key in seen:
                raise ValueError(
                    f"labels {seen[key].name} and {label.name} share signal signature {key}"
                )
            seen[key] = label
            stretch_flags.add(sig.stretch_base is not None)
        if len(stretch_flags) > 1:
            raise ValueError("stretch channel must be present for all labels or none")

    @property
    def has_stretch(self) -> bool:
        return next(iter(self.signals.values())).stretch_base is not None


def synthesize_signal(
    sig: LabelSignalModel, t_s: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Evaluate one label's signal model at the given times (seconds).

    Consumes the RNG in a fixed order (accel, gyro, stretch) so callers can
    build deterministic streams. Values are clipped to sensor full scale.
    """
    n = len(t_s)
    orient = np.asarray(sig.orientation, dtype=float)
    norm = np.linalg.norm(orient)
    if norm > 0:
        orient = orient / norm
    phase = 2.0 * np.pi * sig.freq_hz * t_s
    osc = sig.amp_g * np.sin(phase)
    accel = orient[None, :] * (1.0 + osc)[:, None]
    accel = accel + rng.normal(0.0, sig.noise_sigma, (n, 3))
    accel = np.clip(accel, -16.0, 16.0)

    swing = _GYRO_SWING_DPS_PER_G_HZ * sig.amp_g * sig.freq_hz * np.cos(phase)
    gyro = swing[:, None] * _GYRO_AXIS_WEIGHTS[None, :]
    gyro = gyro + rng.normal(0.0, _GYRO_NOISE_SCALE * sig.noise_sigma, (n, 3))
    gyro = np.clip(gyro, -2000.0, 2000.0)

    if sig.stretch_base is not None:
        stretch = sig.stretch_base + sig.stretch_amp * np.sin(phase + np.pi / 4)
        stretch = stretch + rng.normal(0.0, sig.noise_sigma / 2.0, n)
        stretch = np.clip(stretch, 0.0, 1.0)
    else:
        stretch = None
    return accel, gyro, stretch


def generate_synthetic(
    model: SyntheticActivityModel,
    schedule: Sequence[tuple[Label, int]],
    rate_hz: float,
) -> LabeledRecording:
    """Synthesize a labeled recording from a (label, duration_ms) schedule.

    Pure function of (model, schedule, rate_hz): the RNG is seeded from the
    model and consumed in a fixed per-block order, so equal inputs give
    bit-identical recordings.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be > 0")
    for label, duration_ms in schedule:
        if duration_ms <= 0:
            raise ValueError(f"schedule duration for {label.name} must be > 0")
        if label not in model.signals:
            raise ValueError(f"no signal model for label {label.name}")

    rng = np.random.default_rng(model.seed)
    samples: list[SensorSample] = []
    annotations: list[Annotation] = []
    index = 0
    for label, duration_ms in schedule:
        n = round(duration_ms * rate_hz / 1000.0)
        if n == 0:
            continue
        sig = model.signals[label]
        t_s = (index + np.arange(n)) / rate_hz
        t_ms = np.floor((index + np.arange(n)) * 1000.0 / rate_hz).astype(np.int64)
        accel, gyro, stretch = synthesize_signal(sig, t_s, rng)

        for i in range(n):
            samples.append(
                SensorSample(
                    t_ms=int(t_ms[i]),
                    accel=(float(accel[i, 0]), float(accel[i, 1]), float(accel[i, 2])),
                    gyro=(float(gyro[i, 0]), float(gyro[i, 1]), float(gyro[i, 2])),
                    stretch=float(stretch[i]) if stretch is not None else None,
                )
            )
        start_ms = int(t_ms[0])
        end_ms = int(t_ms[-1]) + 1
        if annotations and annotations[-1].label == label and annotations[-1].end_ms >= start_ms:
            annotations[-1] = Annotation(annotations[-1].start_ms, end_ms, label)
        else:
            annotations.append(Annotation(start_ms, end_ms, label))
        index += n

    return LabeledRecording(samples=samples, annotations=annotations)


def quantize_recording(recording: LabeledRecording) -> LabeledRecording:
    """Round all channel values to the CSV precision (6 fractional digits).

    Recordings quantized this way round-trip bit-exactly through
    write_dataset/read_dataset.
    """
    samples = [
        SensorSample(
            t_ms=s.t_ms,
            accel=tuple(round(v, FLOAT_DIGITS) for v in s.accel),
            gyro=tuple(round(v, FLOAT_DIGITS) for v in s.gyro),
            stretch=round(s.stretch, FLOAT_DIGITS) if s.stretch is not None else None,
        )
        for s in recording.samples
    ]
    return LabeledRecording(
        samples=samples,
        annotations=list(recording.annotations),
        subject_id=recording.subject_id,
        metadata=dict(recording.metadata),
    )


def storage_budget(rate_hz, channels, bytes_per_scalar, duration_s):
    """Raw-sample storage in bytes: rate * channels * bytes_per_scalar * duration."""
    for name, v in (
        ("rate_hz", rate_hz),
        ("channels", channels),
        ("bytes_per_scalar", bytes_per_scalar),
        ("duration_s", duration_s),
    ):
        if v <= 0:
            raise ValueError(f"{name} must be > 0")
    return rate_hz * channels * bytes_per_scalar * duration_s
