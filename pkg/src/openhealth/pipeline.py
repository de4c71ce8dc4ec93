"""Windowing and feature extraction: raw recordings to classifier inputs.

Feature layout, per channel, in canonical channel order:
    [mean, std, min, max, |F1|..|F8|]
where Fk is the k-th nonzero-frequency coefficient of the W-point FFT of
the mean-removed channel, scaled by 2/W so a pure sinusoid of amplitude a
at bin k yields feature value a. Dimension D = channels * 12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ActivityLabel, Label, LabeledRecording, SensorSample

FFT_BINS = 8
FEATURES_PER_CHANNEL = 4 + FFT_BINS
MIN_WINDOW = 2 * FFT_BINS  # need 8 nonzero rfft bins
MAJORITY_THRESHOLD = 0.75
MAX_GAP_PERIODS = 1.5
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class WindowSegment:
    """Exactly W contiguous samples plus the majority label over them."""

    samples: tuple[SensorSample, ...]
    start_ms: int
    label: Label | None = None

    def values(self) -> np.ndarray:
        """(W, C) channel matrix in canonical channel order."""
        return np.array([s.channel_values() for s in self.samples], dtype=float)


@dataclass(frozen=True)
class FeatureStats:
    """Per-dimension z-score statistics, reusable at inference time."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def feature_names(channel_names) -> list[str]:
    names = []
    for ch in channel_names:
        names.extend([f"{ch}_mean", f"{ch}_std", f"{ch}_min", f"{ch}_max"])
        names.extend([f"{ch}_fft{k}" for k in range(1, FFT_BINS + 1)])
    return names


def recording_matrix(recording: LabeledRecording) -> np.ndarray:
    """(N, C) matrix of all channel values of a recording."""
    if not recording.samples:
        c = len(recording.channel_names)
        return np.empty((0, c), dtype=float)
    return np.array([s.channel_values() for s in recording.samples], dtype=float)


def window_stride(w: int, overlap_fraction: float) -> int:
    return max(1, round(w * (1.0 - overlap_fraction)))


def segment(
    recording: LabeledRecording, w: int = 128, overlap_fraction: float = 0.5
) -> list[WindowSegment]:
    """Cut a recording into fixed-length windows with majority labels.

    Windows containing a timing gap larger than 1.5 nominal sample periods
    are dropped. A window is labeled with the class covering at least 75%
    of its samples; an activity window straddling two or more annotations
    with no such majority becomes Transition; otherwise the label is None.
    A recording shorter than w yields an empty list.
    """
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError("overlap_fraction must be in [0, 1)")
    if w < 8:
        raise ValueError("window length must be >= 8")
    n = len(recording.samples)
    if n < w:
        return []

    starts, labels = _window_starts_and_labels(recording, w, overlap_fraction)
    windows = []
    for start, label in zip(starts, labels):
        windows.append(
            WindowSegment(
                samples=tuple(recording.samples[start : start + w]),
                start_ms=recording.samples[start].t_ms,
                label=label,
            )
        )
    return windows


def _window_starts_and_labels(
    recording: LabeledRecording, w: int, overlap_fraction: float
) -> tuple[list[int], list[Label | None]]:
    n = len(recording.samples)
    stride = window_stride(w, overlap_fraction)
    t = np.array([s.t_ms for s in recording.samples], dtype=np.int64)
    diffs = np.diff(t)
    period = float(np.median(diffs)) if diffs.size else 0.0

    bad = (diffs > MAX_GAP_PERIODS * period).astype(np.int64) if diffs.size else np.zeros(0, np.int64)
    bad_prefix = np.concatenate([[0], np.cumsum(bad)])

    label_kind = _label_kind(recording)
    codes = _sample_label_codes(recording, label_kind)
    n_codes = len(label_kind) if label_kind is not None else 0
    prefixes = []
    for c in range(n_codes):
        prefixes.append(np.concatenate([[0], np.cumsum(codes == c)]))

    starts: list[int] = []
    labels: list[Label | None] = []
    for start in range(0, n - w + 1, stride):
        end = start + w
        if bad_prefix[end - 1] - bad_prefix[start] > 0:
            continue  # timing gap inside the window
        starts.append(start)
        labels.append(_majority_label(prefixes, label_kind, start, end, w))
    return starts, labels


def _label_kind(recording: LabeledRecording) -> type | None:
    if not recording.annotations:
        return None
    return type(recording.annotations[0].label)


def _sample_label_codes(recording: LabeledRecording, label_kind: type | None) -> np.ndarray:
    codes = np.full(len(recording.samples), -1, dtype=np.int64)
    if label_kind is None:
        return codes
    t = np.array([s.t_ms for s in recording.samples], dtype=np.int64)
    for a in recording.annotations:
        lo = np.searchsorted(t, a.start_ms, side="left")
        hi = np.searchsorted(t, a.end_ms, side="left")
        codes[lo:hi] = a.label.value
    return codes


def _majority_label(prefixes, label_kind, start: int, end: int, w: int) -> Label | None:
    if label_kind is None:
        return None
    counts = [int(p[end] - p[start]) for p in prefixes]
    top = max(counts)
    if top >= MAJORITY_THRESHOLD * w:
        return label_kind(counts.index(top))
    distinct = sum(1 for c in counts if c > 0)
    if distinct >= 2 and label_kind is ActivityLabel:
        return ActivityLabel.Transition
    return None


def extract_features(window: WindowSegment) -> np.ndarray:
    """Feature vector of one window (see module docstring for the layout)."""
    return extract_feature_matrix(window.values()[None, :, :])[0]


def extract_feature_matrix(windows: np.ndarray) -> np.ndarray:
    """Vectorized feature extraction over an (n, W, C) window stack."""
    if windows.ndim != 3:
        raise ValueError("expected (n_windows, W, channels) array")
    n, w, c = windows.shape
    if w < MIN_WINDOW:
        raise ValueError(f"window length {w} too short for {FFT_BINS} FFT bins (need >= {MIN_WINDOW})")
    mean = windows.mean(axis=1)
    std = windows.std(axis=1)
    mn = windows.min(axis=1)
    mx = windows.max(axis=1)
    centered = windows - mean[:, None, :]
    spectrum = np.abs(np.fft.rfft(centered, axis=1))[:, 1 : FFT_BINS + 1, :] * (2.0 / w)

    feats = np.empty((n, c * FEATURES_PER_CHANNEL), dtype=float)
    for ch in range(c):
        base = ch * FEATURES_PER_CHANNEL
        feats[:, base + 0] = mean[:, ch]
        feats[:, base + 1] = std[:, ch]
        feats[:, base + 2] = mn[:, ch]
        feats[:, base + 3] = mx[:, ch]
        feats[:, base + 4 : base + 4 + FFT_BINS] = spectrum[:, :, ch]
    return feats


def windows_to_matrix(windows: list[WindowSegment]) -> np.ndarray:
    """Stack window channel matrices into an (n, W, C) array."""
    if not windows:
        raise ValueError("no windows")
    return np.stack([win.values() for win in windows])


def normalize_features(
    vectors: np.ndarray, stats: FeatureStats | None = None
) -> tuple[np.ndarray, FeatureStats]:
    """Z-score vectors per dimension, computing stats when not supplied.

    The standard deviation is floored at 1e-8 so constant dimensions map
    to zero instead of blowing up.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim == 1:
        vectors = vectors[None, :]
    if stats is None:
        if vectors.shape[0] == 0:
            raise ValueError("cannot compute stats from an empty feature set")
        mean = vectors.mean(axis=0)
        std = np.maximum(vectors.std(axis=0), STD_FLOOR)
        stats = FeatureStats(mean=mean, std=std)
    if vectors.shape[1] != stats.dim:
        raise ValueError(f"dimension mismatch: vectors have {vectors.shape[1]}, stats have {stats.dim}")
    return (vectors - stats.mean) / stats.std, stats
