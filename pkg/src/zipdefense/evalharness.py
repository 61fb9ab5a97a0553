"""Toy data, a seeded linear victim classifier, and CA / ASR / PA metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from zipdefense.data import LabeledSet

CLASS_NAMES = ("hstripes", "vstripes", "checker", "disk")


def _canonical(cls: int, size: int, phase: int, radius: float) -> np.ndarray:
    """Binary {0, 1} pattern for class ``cls``."""
    r, c = np.indices((size, size))
    if cls == 0:
        return (((r + phase) // 4) % 2 == 0).astype(np.float64)
    if cls == 1:
        return (((c + phase) // 4) % 2 == 0).astype(np.float64)
    if cls == 2:
        return ((r + c) % 2 == 0).astype(np.float64)
    centre = (size - 1) / 2.0
    return (((r - centre) ** 2 + (c - centre) ** 2) <= radius ** 2).astype(np.float64)


def gen_toy_dataset(C: int, n_per_class: int, size: int = 32, channels: int = 3,
                    rng: np.random.Generator | None = None, brightness_jitter: float = 0.1,
                    phase_jitter: int = 1, pixel_noise: float = 0.02,
                    low: float = 0.25, high: float = 0.75) -> LabeledSet:
    """Class-balanced procedural images.

    Classes are horizontal stripes, vertical stripes (period 8), a one-pixel
    checkerboard and a centred disk. Each sample draws a per-channel brightness
    offset, a stripe phase / disk radius shift and i.i.d. pixel noise.
    """
    if not 1 <= C <= len(CLASS_NAMES):
        raise ValueError(f"class count must be in [1, {len(CLASS_NAMES)}], got {C}")
    if n_per_class < 1 or size < 4 or channels not in (1, 3):
        raise ValueError("invalid toy dataset parameters")
    rng = rng if rng is not None else np.random.default_rng(0)
    images, labels = [], []
    for cls in range(C):
        for _ in range(n_per_class):
            phase = int(rng.integers(-phase_jitter, phase_jitter + 1)) if phase_jitter else 0
            radius = size / 4.0 + (phase if cls == 3 else 0)
            base = _canonical(cls, size, phase, radius)
            offset = rng.uniform(-brightness_jitter, brightness_jitter, channels) if brightness_jitter else np.zeros(channels)
            img = low + (high - low) * base[..., None] + offset
            if pixel_noise:
                img = img + pixel_noise * rng.standard_normal(img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(cls)
    meta = dict(classes=C, n_per_class=n_per_class, size=size, channels=channels,
                brightness_jitter=brightness_jitter, phase_jitter=phase_jitter, pixel_noise=pixel_noise)
    return LabeledSet(np.stack(images), np.array(labels), meta=meta)


@dataclass
class LinearSoftmaxClassifier:
    weight: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)

    def scores(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        return x.reshape(len(x), -1) @ self.weight.T + self.bias

    def predict(self, images) -> np.ndarray:
        return np.argmax(self.scores(images), axis=1)

    def save(self, path) -> None:
        np.savez(path, weight=self.weight, bias=self.bias)

    @classmethod
    def load(cls, path) -> "LinearSoftmaxClassifier":
        with np.load(path) as f:
            return cls(f["weight"].copy(), f["bias"].copy())


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_classifier(ds: LabeledSet, rng: np.random.Generator, epochs: int = 40, lr: float = 0.5,
                     batch_size: int = 32, weight_decay: float = 0.0) -> LinearSoftmaxClassifier:
    """Multinomial logistic regression by seeded mini-batch gradient descent."""
    classes = np.unique(ds.labels)
    if len(classes) < 2:
        raise ValueError("training needs at least two classes")
    n_classes = int(ds.labels.max()) + 1
    x = ds.images.reshape(len(ds), -1)
    y = ds.labels
    d = x.shape[1]
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            p = _softmax(x[idx] @ W.T + b)
            g = (p - onehot[idx]) / len(idx)
            W -= lr * (g.T @ x[idx] + weight_decay * W)
            b -= lr * g.sum(axis=0)
    return LinearSoftmaxClassifier(W, b)


@dataclass
class DefenseMetrics:
    """Counts behind CA, ASR and PA.

    CA: purified clean images classified as their true label.
    ASR: purified poisoned images whose true label is not the target,
    classified as the target.
    PA: purified poisoned images (all of them) classified as their true label.
    """

    ca_correct: int
    ca_total: int
    asr_hits: int
    asr_total: int
    pa_correct: int
    pa_total: int

    @staticmethod
    def _ratio(a: int, b: int) -> float:
        return a / b if b else float("nan")

    @property
    def CA(self) -> float:
        return self._ratio(self.ca_correct, self.ca_total)

    @property
    def ASR(self) -> float:
        return self._ratio(self.asr_hits, self.asr_total)

    @property
    def PA(self) -> float:
        return self._ratio(self.pa_correct, self.pa_total)

    def to_dict(self) -> dict:
        return {"CA": self.CA, "ASR": self.ASR, "PA": self.PA, "counts": asdict(self)}


def evaluate(clf: LinearSoftmaxClassifier, clean_test: LabeledSet, poisoned_test: LabeledSet,
             purified_clean, purified_poisoned, target_label: int) -> DefenseMetrics:
    """Score a defense; pass the raw sets as the purified ones for "no defense"."""
    purified_clean = np.asarray(purified_clean, dtype=np.float64)
    purified_poisoned = np.asarray(purified_poisoned, dtype=np.float64)
    n = len(clean_test)
    if not (len(poisoned_test) == len(purified_clean) == len(purified_poisoned) == n):
        raise ValueError("clean, poisoned and purified sets must be aligned")
    if not np.array_equal(clean_test.labels, poisoned_test.labels):
        raise ValueError("poisoned set labels must match the clean set (true labels)")
    y = clean_test.labels
    pred_clean = clf.predict(purified_clean)
    pred_pois = clf.predict(purified_poisoned)
    eligible = y != target_label
    return DefenseMetrics(
        ca_correct=int(np.sum(pred_clean == y)),
        ca_total=n,
        asr_hits=int(np.sum(pred_pois[eligible] == target_label)),
        asr_total=int(eligible.sum()),
        pa_correct=int(np.sum(pred_pois == y)),
        pa_total=n,
    )
