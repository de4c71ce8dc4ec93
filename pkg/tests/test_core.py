from __future__ import annotations

import pytest

from openhealth.core import (
    ActivityLabel,
    Annotation,
    DeviceProfile,
    GestureLabel,
    LabeledRecording,
    SensorSample,
    decode_label,
    encode_label,
    label_set_for,
    parse_label,
)

from conftest import make_samples


def test_activity_label_encoding_order():
    assert encode_label(ActivityLabel.Drive) == 0
    assert encode_label(ActivityLabel.Transition) == 6
    assert [l.value for l in ActivityLabel] == list(range(7))
    assert [l.value for l in GestureLabel] == list(range(4))


@pytest.mark.parametrize("label", list(ActivityLabel) + list(GestureLabel))
def test_label_round_trip(label):
    assert decode_label(type(label), encode_label(label)) is label


def test_decode_label_rejects_bad_index():
    with pytest.raises(ValueError):
        decode_label(ActivityLabel, 7)
    with pytest.raises(ValueError):
        decode_label(GestureLabel, -1)


def test_parse_label_and_app_mapping():
    assert parse_label("Walk") is ActivityLabel.Walk
    assert parse_label("Up") is GestureLabel.Up
    with pytest.raises(ValueError):
        parse_label("Fly")
    assert label_set_for("har") is ActivityLabel
    assert label_set_for("gesture") is GestureLabel


def test_default_profile_matches_cited_part():
    p = DeviceProfile()
    assert p.cpu_mhz == 47
    assert p.sram_bytes == 20480
    assert p.flash_bytes == 131072
    assert p.p_active_har_mw == 12.5
    assert p.p_active_gesture_mw == 10.0


def test_profile_rejects_nonpositive_power():
    with pytest.raises(ValueError):
        DeviceProfile(p_sleep_mw=0.0)
    with pytest.raises(ValueError):
        DeviceProfile(sample_rate_hz=-1)


def test_sample_range_validation():
    SensorSample(0, (16.0, 0, 0), (2000.0, 0, 0), 1.0).validate()
    with pytest.raises(ValueError):
        SensorSample(0, (16.1, 0, 0), (0, 0, 0)).validate()
    with pytest.raises(ValueError):
        SensorSample(0, (0, 0, 0), (0, -2001.0, 0)).validate()
    with pytest.raises(ValueError):
        SensorSample(0, (0, 0, 0), (0, 0, 0), stretch=1.2).validate()


def test_recording_requires_increasing_timestamps():
    samples = make_samples(3)
    bad = [samples[0], samples[2], samples[1]]
    with pytest.raises(ValueError, match="strictly increasing"):
        LabeledRecording(samples=bad)


def test_recording_requires_consistent_stretch():
    samples = make_samples(2, stretch=0.5) + [
        SensorSample(t_ms=20, accel=(0, 0, 1), gyro=(0, 0, 0), stretch=None)
    ]
    with pytest.raises(ValueError, match="stretch"):
        LabeledRecording(samples=samples)


def test_recording_rejects_overlapping_annotations():
    samples = make_samples(10)
    with pytest.raises(ValueError, match="overlap"):
        LabeledRecording(
            samples=samples,
            annotations=[
                Annotation(0, 50, ActivityLabel.Walk),
                Annotation(40, 80, ActivityLabel.Sit),
            ],
        )


def test_recording_rejects_mixed_label_kinds():
    samples = make_samples(10)
    with pytest.raises(ValueError, match="mix"):
        LabeledRecording(
            samples=samples,
            annotations=[
                Annotation(0, 40, ActivityLabel.Walk),
                Annotation(50, 80, GestureLabel.Up),
            ],
        )


def test_label_at_half_open_intervals():
    samples = make_samples(10)
    rec = LabeledRecording(
        samples=samples,
        annotations=[Annotation(0, 50, ActivityLabel.Walk), Annotation(50, 91, ActivityLabel.Sit)],
    )
    assert rec.label_at(0) is ActivityLabel.Walk
    assert rec.label_at(49) is ActivityLabel.Walk
    assert rec.label_at(50) is ActivityLabel.Sit
    assert rec.label_at(91) is None


def test_display_names():
    assert ActivityLabel.LieDown.display_name == "Lie Down"
    assert ActivityLabel.Transition.display_name == "Transitions"
    assert GestureLabel.Left.display_name == "Left"
