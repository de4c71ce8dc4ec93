"""From-scratch MLP classifier: training, evaluation, quantization, model blobs.

Architecture is a single rectifier hidden layer with a softmax output,
sized [D, H, C]. Training is plain SGD with momentum, fully deterministic
given (seed, data, config). Model files are versioned binary blobs:
``OHM1`` for float64 models, ``OHQ1`` for int8-quantized ones (both
big-endian, row-major).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ACCEL_CHANNELS,
    GYRO_CHANNELS,
    STRETCH_CHANNEL,
    Label,
)
from .pipeline import (
    FeatureStats,
    extract_feature_matrix,
    normalize_features,
)

MODEL_MAGIC = b"OHM1"
QUANT_MAGIC = b"OHQ1"
DEFAULT_HIDDEN = 16

CHANNEL_GROUPS: Mapping[str, tuple[str, ...]] = {
    "accel": ACCEL_CHANNELS,
    "gyro": GYRO_CHANNELS,
    "stretch": STRETCH_CHANNEL,
}


class DegenerateDatasetError(ValueError):
    """Training data does not contain at least two classes."""


@dataclass
class MlpModel:
    """Weights for a [D, H, C] rectifier network with softmax output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    stats: FeatureStats | None = None

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1])

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def validate(self) -> None:
        d, h, c = self.layer_sizes
        if self.b1.shape != (h,) or self.w2.shape != (h, c) or self.b2.shape != (c,):
            raise ValueError("inconsistent layer shapes")
        for t in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(t)):
                raise ValueError("non-finite model parameter")

    def tensors(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    split_fraction: float = 0.8
    patience: int | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must be in (0, 1)")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be > 0")


def init_model(layer_sizes: Sequence[int], seed: int = 0) -> MlpModel:
    """He-style scaled uniform initialization from a seeded RNG."""
    d, h, c = layer_sizes
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / d)
    lim2 = np.sqrt(6.0 / h)
    return MlpModel(
        w1=rng.uniform(-lim1, lim1, (d, h)),
        b1=np.zeros(h),
        w2=rng.uniform(-lim2, lim2, (h, c)),
        b2=np.zeros(c),
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probability vector(s) for normalized feature input.

    Accepts a single (D,) vector or an (n, D) batch; probabilities sum
    to 1 along the class axis.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.w1.shape[0]:
        raise ValueError(f"input dimension {x.shape[1]} != model dimension {model.w1.shape[0]}")
    hidden = np.maximum(x @ model.w1 + model.b1, 0.0)
    probs = _softmax(hidden @ model.w2 + model.b2)
    return probs[0] if single else probs


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Argmax class indices; ties break toward the lowest class index."""
    probs = forward(model, x)
    if probs.ndim == 1:
        return np.argmax(probs)
    return np.argmax(probs, axis=1)


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def loss_and_grad(model: MlpModel, x: np.ndarray, y: np.ndarray) -> tuple[float, Gradients]:
    """Mean cross-entropy over the batch and its analytic gradient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a nonempty (n, D) array")
    if x.shape[1] != model.w1.shape[0]:
        raise ValueError("input dimension mismatch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature input")
    c = model.w2.shape[1]
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError("label index outside model classes")

    n = x.shape[0]
    z1 = x @ model.w1 + model.b1
    h = np.maximum(z1, 0.0)
    z2 = h @ model.w2 + model.b2
    zmax = z2.max(axis=1, keepdims=True)
    log_probs = z2 - zmax - np.log(np.exp(z2 - zmax).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), y].mean())

    dz2 = np.exp(log_probs)
    dz2[np.arange(n), y] -= 1.0
    dz2 /= n
    dw2 = h.T @ dz2
    db2 = dz2.sum(axis=0)
    dh = dz2 @ model.w2.T
    dz1 = dh * (z1 > 0.0)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, Gradients(w1=dw1, b1=db1, w2=dw2, b2=db2)


def train(
    model: MlpModel, x: np.ndarray, y: np.ndarray, config: TrainConfig
) -> tuple[MlpModel, list[float]]:
    """SGD-with-momentum training loop; returns the model and per-epoch mean loss.

    The input model is not mutated. Raises DegenerateDatasetError when the
    data holds fewer than two distinct classes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise DegenerateDatasetError("training data must contain at least 2 classes")

    m = MlpModel(
        w1=model.w1.copy(), b1=model.b1.copy(),
        w2=model.w2.copy(), b2=model.b2.copy(),
        stats=model.stats,
    )
    vel = [np.zeros_like(t) for t in m.tensors()]
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    best = np.inf
    stale = 0
    n = x.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, g = loss_and_grad(m, x[idx], y[idx])
            losses.append(loss)
            grads = [g.w1, g.b1, g.w2, g.b2]
            for i, (t, dt) in enumerate(zip(m.tensors(), grads)):
                vel[i] = config.momentum * vel[i] - config.learning_rate * dt
                t += vel[i]
        epoch_loss = float(np.mean(losses))
        history.append(epoch_loss)
        if config.patience is not None:
            if epoch_loss < best - 1e-9:
                best = epoch_loss
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return m, history


def split_dataset(
    n: int, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled train/test index split."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * fraction))
    return order[:cut], order[cut:]


@dataclass
class EvalReport:
    """Per-class counts and the confusion matrix of one evaluation run."""

    label_set: type
    confusion: np.ndarray  # rows = true class, cols = predicted class

    def __post_init__(self) -> None:
        c = len(self.label_set)
        if self.confusion.shape != (c, c):
            raise ValueError(f"confusion matrix must be {c}x{c}")

    @property
    def totals(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def corrects(self) -> np.ndarray:
        return np.diag(self.confusion)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.confusion))

    @property
    def overall_accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def class_accuracy(self, label: Label) -> float | None:
        t = int(self.totals[label.value])
        return int(self.corrects[label.value]) / t if t else None

    def to_dict(self) -> dict:
        rows = {}
        for label in self.label_set:
            t = int(self.totals[label.value])
            k = int(self.corrects[label.value])
            rows[label.name] = {
                "correct": k,
                "total": t,
                "accuracy_pct": round(100.0 * k / t, 1) if t else None,
            }
        return {
            "classes": rows,
            "overall": {
                "correct": self.correct,
                "total": self.total,
                "accuracy_pct": round(100.0 * self.overall_accuracy, 1) if self.total else None,
            },
            "confusion": self.confusion.tolist(),
        }


def evaluate(model: MlpModel, x: np.ndarray, y: np.ndarray, label_set: type) -> EvalReport:
    """Confusion-matrix evaluation of normalized features against labels."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.shape[0] == 0:
        raise ValueError("empty test set")
    c = len(label_set)
    pred = predict(model, x)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return EvalReport(label_set=label_set, confusion=confusion)


def _accuracy_text(pct: float) -> str:
    s = f"{pct:.1f}"
    return s[:-2] if s.endswith(".0") else s


def render_report(report: EvalReport) -> str:
    """Fixed-width per-class accuracy table (golden format, byte-stable)."""
    lines = [f"{'Activity':<13}{'Correct / Total':>18}   {'Accuracy (%)':>12}"]
    for label in report.label_set:
        t = int(report.totals[label.value])
        k = int(report.corrects[label.value])
        counts = f"{k} / {t}"
        acc = _accuracy_text(100.0 * k / t) if t else "-"
        lines.append(f"{label.display_name:<13}{counts:>18}   {acc:>12}")
    counts = f"{report.correct} / {report.total}"
    acc = _accuracy_text(100.0 * report.overall_accuracy) if report.total else "-"
    lines.append(f"{'Overall':<13}{counts:>18}   {acc:>12}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Quantization

@dataclass(frozen=True)
class QuantizedTensor:
    q: np.ndarray  # int8
    scale: float
    zero_point: int

    def dequantize(self) -> np.ndarray:
        return self.scale * (self.q.astype(np.float64) - self.zero_point)


def quantize_tensor(x: np.ndarray) -> QuantizedTensor:
    """Per-tensor affine int8 quantization (range [-128, 127])."""
    mn = float(x.min()) if x.size else 0.0
    mx = float(x.max()) if x.size else 0.0
    if mx > mn:
        scale = (mx - mn) / 255.0
        zp = int(np.clip(round(-128 - mn / scale), -128, 127))
    elif mx == 0.0:
        scale, zp = 1.0, 0
    else:
        scale, zp = abs(mx) / 127.0, 0
    q = np.clip(np.round(x / scale) + zp, -128, 127).astype(np.int8)
    return QuantizedTensor(q=q, scale=scale, zero_point=zp)


@dataclass
class QuantizedModel:
    """Int8 parameter image plus the float stats needed at inference time.

    flash_bytes counts only the flash-resident parameter image (int8
    payload, per-tensor scale/offset, header). Normalization stats are
    carried alongside for the simulator; on-device they fold into the
    first layer, so they add no flash.
    """

    layer_sizes: tuple[int, int, int]
    tensors: list[QuantizedTensor]
    stats: FeatureStats | None = None

    @property
    def flash_bytes(self) -> int:
        return len(self.param_image())

    def param_image(self) -> bytes:
        out = [QUANT_MAGIC, struct.pack(">BB", 1, len(self.layer_sizes))]
        out.append(struct.pack(f">{len(self.layer_sizes)}I", *self.layer_sizes))
        for t in self.tensors:
            out.append(struct.pack(">fi", t.scale, t.zero_point))
            out.append(t.q.astype(">i1").tobytes())
        return b"".join(out)

    def dequantized(self) -> MlpModel:
        w1, b1, w2, b2 = [t.dequantize() for t in self.tensors]
        d, h, c = self.layer_sizes
        return MlpModel(
            w1=w1.reshape(d, h), b1=b1, w2=w2.reshape(h, c), b2=b2, stats=self.stats
        )


def quantize_model(model: MlpModel) -> QuantizedModel:
    """Quantize all parameters to int8 per-tensor affine (stored flat, row-major)."""
    model.validate()
    return QuantizedModel(
        layer_sizes=model.layer_sizes,
        tensors=[quantize_tensor(t.ravel()) for t in model.tensors()],
        stats=model.stats,
    )


# ---------------------------------------------------------------------------
# Model blobs

def _pack_f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype=float).astype(">f8").tobytes()


def _unpack_f64(buf: bytes, offset: int, count: int) -> tuple[np.ndarray, int]:
    end = offset + 8 * count
    return np.frombuffer(buf[offset:end], dtype=">f8").astype(float), end


def model_to_bytes(model: MlpModel) -> bytes:
    model.validate()
    d, h, c = model.layer_sizes
    out = [MODEL_MAGIC, struct.pack(">BB", 1, 3), struct.pack(">3I", d, h, c)]
    for t in model.tensors():
        out.append(_pack_f64(t))
    if model.stats is not None:
        out.append(struct.pack(">B", 1))
        out.append(_pack_f64(model.stats.mean))
        out.append(_pack_f64(model.stats.std))
    else:
        out.append(struct.pack(">B", 0))
    return b"".join(out)


def model_from_bytes(buf: bytes) -> MlpModel:
    if buf[:4] != MODEL_MAGIC:
        raise ValueError("not a model blob (bad magic)")
    version, n_sizes = struct.unpack(">BB", buf[4:6])
    if version != 1 or n_sizes != 3:
        raise ValueError(f"unsupported model blob version {version}")
    d, h, c = struct.unpack(">3I", buf[6:18])
    off = 18
    w1, off = _unpack_f64(buf, off, d * h)
    b1, off = _unpack_f64(buf, off, h)
    w2, off = _unpack_f64(buf, off, h * c)
    b2, off = _unpack_f64(buf, off, c)
    (has_stats,) = struct.unpack(">B", buf[off : off + 1])
    off += 1
    stats = None
    if has_stats:
        mean, off = _unpack_f64(buf, off, d)
        std, off = _unpack_f64(buf, off, d)
        stats = FeatureStats(mean=mean, std=std)
    model = MlpModel(w1=w1.reshape(d, h), b1=b1, w2=w2.reshape(h, c), b2=b2, stats=stats)
    model.validate()
    return model


def quantized_to_bytes(qm: QuantizedModel) -> bytes:
    out = [qm.param_image()]
    if qm.stats is not None:
        out.append(struct.pack(">B", 1))
        out.append(_pack_f64(qm.stats.mean))
        out.append(_pack_f64(qm.stats.std))
    else:
        out.append(struct.pack(">B", 0))
    return b"".join(out)


def quantized_from_bytes(buf: bytes) -> QuantizedModel:
    if buf[:4] != QUANT_MAGIC:
        raise ValueError("not a quantized model blob (bad magic)")
    version, n_sizes = struct.unpack(">BB", buf[4:6])
    if version != 1 or n_sizes != 3:
        raise ValueError(f"unsupported quantized blob version {version}")
    d, h, c = struct.unpack(">3I", buf[6:18])
    off = 18
    tensors = []
    for count in (d * h, h, h * c, c):
        scale, zp = struct.unpack(">fi", buf[off : off + 8])
        off += 8
        q = np.frombuffer(buf[off : off + count], dtype=">i1").astype(np.int8)
        off += count
        tensors.append(QuantizedTensor(q=q, scale=float(scale), zero_point=int(zp)))
    (has_stats,) = struct.unpack(">B", buf[off : off + 1])
    off += 1
    stats = None
    if has_stats:
        mean, off = _unpack_f64(buf, off, d)
        std, off = _unpack_f64(buf, off, d)
        stats = FeatureStats(mean=mean, std=std)
    return QuantizedModel(layer_sizes=(d, h, c), tensors=tensors, stats=stats)


def save_model(model: MlpModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> MlpModel:
    return model_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Sensor-ablation comparison

def resolve_channels(subset: Sequence[str], available: Sequence[str]) -> tuple[int, ...]:
    """Expand channel group aliases and map names to column indices."""
    if not subset:
        raise ValueError("channel subset is empty")
    names: list[str] = []
    for entry in subset:
        names.extend(CHANNEL_GROUPS.get(entry, (entry,)))
    indices = []
    for name in names:
        if name not in available:
            raise ValueError(f"channel {name!r} not present (have {', '.join(available)})")
        indices.append(available.index(name))
    return tuple(indices)


def ablation_compare(
    windows: np.ndarray,
    labels: np.ndarray,
    channel_names: Sequence[str],
    channel_subsets: Sequence[Sequence[str]],
    config: TrainConfig,
    hidden: int = DEFAULT_HIDDEN,
    n_classes: int | None = None,
) -> dict[tuple[str, ...], float]:
    """Train one model per channel subset with a shared seed and split.

    windows is the (n, W, C) stack of labeled windows; labels are class
    indices. Returns overall test accuracy per subset.
    """
    labels = np.asarray(labels, dtype=int)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    train_idx, test_idx = split_dataset(len(labels), config.split_fraction, config.seed)
    results: dict[tuple[str, ...], float] = {}
    for subset in channel_subsets:
        cols = resolve_channels(subset, channel_names)
        feats = extract_feature_matrix(windows[:, :, cols])
        x_train, stats = normalize_features(feats[train_idx])
        x_test, _ = normalize_features(feats[test_idx], stats)
        model = init_model((feats.shape[1], hidden, n_classes), seed=config.seed)
        model.stats = stats
        trained, _ = train(model, x_train, labels[train_idx], config)
        pred = predict(trained, x_test)
        results[tuple(subset)] = float(np.mean(pred == labels[test_idx]))
    return results
