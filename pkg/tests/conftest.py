from __future__ import annotations

import math

import pytest

from openhealth.core import (
    ActivityLabel,
    Annotation,
    LabeledRecording,
    SensorSample,
)
from openhealth.dataio import LabelSignalModel, SyntheticActivityModel


def make_samples(n: int, period_ms: int = 10, stretch: float | None = 0.5):
    """Constant 1 g gravity along z, zero gyro."""
    return [
        SensorSample(t_ms=i * period_ms, accel=(0.0, 0.0, 1.0), gyro=(0.0, 0.0, 0.0), stretch=stretch)
        for i in range(n)
    ]


def make_recording(n: int = 256, period_ms: int = 10, label=ActivityLabel.Walk, stretch=0.5):
    samples = make_samples(n, period_ms, stretch)
    annotations = [Annotation(0, samples[-1].t_ms + 1, label)] if label is not None else []
    return LabeledRecording(samples=samples, annotations=annotations)


def sine_samples(n: int, freq_hz: float, amp: float, rate_hz: float = 100.0, axis: int = 2):
    samples = []
    for i in range(n):
        t = i / rate_hz
        accel = [0.0, 0.0, 0.0]
        accel[axis] = 1.0 + amp * math.sin(2.0 * math.pi * freq_hz * t)
        samples.append(
            SensorSample(t_ms=round(i * 1000 / rate_hz), accel=tuple(accel), gyro=(0.0, 0.0, 0.0), stretch=None)
        )
    return samples


@pytest.fixture
def tiny_har_model():
    """Three-class synthetic model, cheap enough for per-test generation."""
    return SyntheticActivityModel(
        signals={
            ActivityLabel.Walk: LabelSignalModel(
                orientation=(0.0, 0.0, 1.0), freq_hz=2.0, amp_g=0.35,
                noise_sigma=0.02, stretch_base=0.4, stretch_amp=0.25,
            ),
            ActivityLabel.Sit: LabelSignalModel(
                orientation=(0.15, 0.0, 0.99), freq_hz=0.0, amp_g=0.0,
                noise_sigma=0.01, stretch_base=0.7, stretch_amp=0.0,
            ),
            ActivityLabel.LieDown: LabelSignalModel(
                orientation=(1.0, 0.0, 0.0), freq_hz=0.0, amp_g=0.0,
                noise_sigma=0.01, stretch_base=0.05, stretch_amp=0.0,
            ),
        },
        seed=7,
    )
