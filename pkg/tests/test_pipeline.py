from __future__ import annotations

import numpy as np
import pytest

from openhealth.core import ActivityLabel, Annotation, GestureLabel, LabeledRecording, SensorSample
from openhealth.pipeline import (
    FEATURES_PER_CHANNEL,
    FFT_BINS,
    extract_feature_matrix,
    extract_features,
    normalize_features,
    segment,
    window_stride,
    windows_to_matrix,
)

from conftest import make_recording, make_samples, sine_samples


def test_segment_basic_arithmetic():
    rec = make_recording(256)
    windows = segment(rec, w=128, overlap_fraction=0.5)
    assert len(windows) == 3
    assert [w.start_ms for w in windows] == [0, 640, 1280]
    assert all(len(w.samples) == 128 for w in windows)


def test_segment_short_recording_empty():
    rec = make_recording(100)
    assert segment(rec, w=128) == []


def test_segment_count_formula():
    for n in (128, 200, 256, 300, 511):
        for overlap in (0.0, 0.25, 0.5, 0.75):
            rec = make_recording(n)
            stride = window_stride(128, overlap)
            expected = (n - 128) // stride + 1
            assert len(segment(rec, 128, overlap)) == expected, (n, overlap)


def test_segment_validates_arguments():
    rec = make_recording(64)
    with pytest.raises(ValueError):
        segment(rec, w=4)
    with pytest.raises(ValueError):
        segment(rec, w=16, overlap_fraction=1.0)


def test_majority_label_threshold():
    # 60% Walk / 40% Sit within one window -> Transition (neither >= 75%)
    samples = make_samples(128)
    ann = [Annotation(0, samples[76].t_ms + 1, ActivityLabel.Walk),
           Annotation(samples[77].t_ms, samples[-1].t_ms + 1, ActivityLabel.Sit)]
    rec = LabeledRecording(samples=samples, annotations=ann)
    (window,) = segment(rec, w=128)
    assert window.label is ActivityLabel.Transition

    # 80% Walk / 20% Sit -> Walk
    ann = [Annotation(0, samples[102].t_ms + 1, ActivityLabel.Walk),
           Annotation(samples[103].t_ms, samples[-1].t_ms + 1, ActivityLabel.Sit)]
    rec = LabeledRecording(samples=samples, annotations=ann)
    (window,) = segment(rec, w=128)
    assert window.label is ActivityLabel.Walk


def test_majority_label_gesture_has_no_transition():
    samples = make_samples(128, stretch=None)
    ann = [Annotation(0, samples[63].t_ms + 1, GestureLabel.Up),
           Annotation(samples[64].t_ms, samples[-1].t_ms + 1, GestureLabel.Down)]
    rec = LabeledRecording(samples=samples, annotations=ann)
    (window,) = segment(rec, w=128)
    assert window.label is None


def test_partially_unlabeled_window_with_single_annotation():
    samples = make_samples(128)
    ann = [Annotation(0, samples[63].t_ms + 1, ActivityLabel.Walk)]  # 50% covered
    rec = LabeledRecording(samples=samples, annotations=ann)
    (window,) = segment(rec, w=128)
    assert window.label is None


def test_windows_with_time_gaps_are_dropped():
    samples = make_samples(128) + [
        SensorSample(t_ms=1270 + 500 + 10 * i, accel=(0, 0, 1), gyro=(0, 0, 0), stretch=0.5)
        for i in range(128)
    ]
    rec = LabeledRecording(samples=samples)
    windows = segment(rec, w=128, overlap_fraction=0.5)
    # windows straddling the 500 ms gap vanish; clean ones on both sides stay
    assert all(
        max(b.t_ms - a.t_ms for a, b in zip(w.samples, w.samples[1:])) <= 15
        for w in windows
    )
    assert len(windows) == 2


def test_features_constant_channel():
    rec = make_recording(128)
    (window,) = segment(rec, w=128)
    feats = extract_features(window)
    az = 2 * FEATURES_PER_CHANNEL  # channel order ax, ay, az
    assert feats[az + 0] == pytest.approx(1.0)  # mean
    assert feats[az + 1] == pytest.approx(0.0)  # std
    assert feats[az + 2] == pytest.approx(1.0)  # min
    assert feats[az + 3] == pytest.approx(1.0)  # max
    assert np.allclose(feats[az + 4 : az + 4 + FFT_BINS], 0.0)


def test_features_pure_sinusoid_bin3_closed_form():
    # Closed-form DFT oracle: x[n] = a*sin(2*pi*3*n/W) has |X_3| = a*W/2,
    # zero elsewhere; features scale by 2/W so feature bin 3 equals a.
    w, a = 128, 0.25
    samples = sine_samples(w, freq_hz=3 * 100.0 / w, amp=a)
    rec = LabeledRecording(samples=samples)
    (window,) = segment(rec, w=w)
    feats = extract_features(window)
    az = 2 * FEATURES_PER_CHANNEL
    bins = feats[az + 4 : az + 4 + FFT_BINS]
    assert bins[2] == pytest.approx(a, abs=1e-9)
    for k, v in enumerate(bins):
        if k != 2:
            assert abs(v) < 1e-9


def test_features_deterministic_for_identical_windows():
    rec = make_recording(256)
    w1, _, w3 = segment(rec, w=128, overlap_fraction=0.5)
    assert np.array_equal(extract_features(w1), extract_features(w3))


def test_features_translation_covariance():
    rng = np.random.default_rng(0)
    base = rng.normal(0, 0.3, (1, 128, 7))
    shifted = base.copy()
    shifted[:, :, 3] += 5.0
    f0 = extract_feature_matrix(base)[0]
    f1 = extract_feature_matrix(shifted)[0]
    ch = 3 * FEATURES_PER_CHANNEL
    assert f1[ch + 0] == pytest.approx(f0[ch + 0] + 5.0, abs=1e-9)
    assert f1[ch + 2] == pytest.approx(f0[ch + 2] + 5.0, abs=1e-9)
    assert f1[ch + 3] == pytest.approx(f0[ch + 3] + 5.0, abs=1e-9)
    mask = np.ones_like(f0, dtype=bool)
    mask[[ch, ch + 2, ch + 3]] = False
    assert np.allclose(f0[mask], f1[mask], atol=1e-9)


def test_features_never_read_outside_window():
    rec_a = make_recording(256)
    samples_b = list(rec_a.samples[:128]) + [
        SensorSample(t_ms=s.t_ms, accel=(0.3, 0.1, 0.9), gyro=(5.0, 0, 0), stretch=0.2)
        for s in rec_a.samples[128:]
    ]
    rec_b = LabeledRecording(samples=samples_b)
    wa = segment(rec_a, w=128, overlap_fraction=0.0)[0]
    wb = segment(rec_b, w=128, overlap_fraction=0.0)[0]
    assert np.array_equal(extract_features(wa), extract_features(wb))


def test_feature_matrix_matches_single_window_path(tiny_har_model):
    from openhealth.dataio import generate_synthetic

    rec = generate_synthetic(tiny_har_model, [(ActivityLabel.Walk, 3000)], 100.0)
    windows = segment(rec, w=128, overlap_fraction=0.5)
    batch = extract_feature_matrix(windows_to_matrix(windows))
    singles = np.stack([extract_features(w) for w in windows])
    assert np.allclose(batch, singles, atol=0, rtol=0)


def test_window_too_short_for_fft_bins():
    with pytest.raises(ValueError, match="FFT bins"):
        extract_feature_matrix(np.zeros((1, 8, 3)))


def test_normalize_zero_variance_floors_to_zero():
    vecs = np.ones((5, 4))
    normed, stats = normalize_features(vecs)
    assert np.allclose(normed, 0.0)
    assert stats.dim == 4


def test_normalize_self_stats():
    rng = np.random.default_rng(1)
    vecs = rng.normal(3.0, 2.0, (200, 6))
    normed, stats = normalize_features(vecs)
    assert np.allclose(normed.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(normed.std(axis=0), 1.0, atol=1e-6)
    again, _ = normalize_features(vecs, stats)
    assert np.array_equal(normed, again)


def test_normalize_dimension_mismatch():
    _, stats = normalize_features(np.ones((3, 4)))
    with pytest.raises(ValueError, match="mismatch"):
        normalize_features(np.ones((2, 5)), stats)


def test_normalize_empty_without_stats():
    with pytest.raises(ValueError, match="empty"):
        normalize_features(np.empty((0, 4)))
