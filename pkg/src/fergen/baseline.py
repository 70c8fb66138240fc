"""Linear softmax baseline for sanity-checking generated datasets.

A deliberately small evaluator: channel images are block-averaged down to
28x28x3, scaled to [0, 1] and flattened, then a linear 7-class softmax
classifier is trained by minibatch gradient descent on the cross-entropy
loss. Well-separated expression categories should push accuracy far above
the 1/7 chance level; anything near chance flags a broken dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CLASS_NAMES
from .pipeline import DatasetManifest
from .raster import CROP_SIZE, load_png

NUM_CLASSES = len(CLASS_NAMES)
_DOWN = 8
_SIDE = CROP_SIZE // _DOWN
FEATURE_LENGTH = _SIDE * _SIDE * 3
_BATCH = 32


@dataclass(frozen=True)
class EvalExample:
    """Flattened 28x28x3 features in [0, 1] plus an emotion class index."""

    features: np.ndarray
    label: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.shape != (FEATURE_LENGTH,):
            raise ValueError(f"features must have length {FEATURE_LENGTH}, "
                             f"got shape {features.shape}")
        if not 0 <= self.label < NUM_CLASSES:
            raise ValueError(f"label must lie in [0, {NUM_CLASSES}), got {self.label}")
        features.setflags(write=False)
        object.__setattr__(self, "features", features)


def image_to_features(pixels: np.ndarray) -> np.ndarray:
    """8x8 block-average a 224x224x3 uint8 image and scale to [0, 1]."""
    pixels = np.asarray(pixels)
    if pixels.shape != (CROP_SIZE, CROP_SIZE, 3):
        raise ValueError(f"expected {CROP_SIZE}x{CROP_SIZE}x3 pixels, got {pixels.shape}")
    blocks = pixels.reshape(_SIDE, _DOWN, _SIDE, _DOWN, 3).astype(np.float64)
    return (blocks.mean(axis=(1, 3)) / 255.0).ravel()


def examples_from_manifest(manifest_path, split: str) -> list[EvalExample]:
    """Load one split of a generated dataset as evaluation examples."""
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.read(manifest_path)
    examples = []
    for record in manifest.records_for(split):
        pixels = load_png(manifest_path.parent / record.path)
        label = CLASS_NAMES.index(record.category.class_name)
        examples.append(EvalExample(features=image_to_features(pixels), label=label))
    return examples


def softmax_cross_entropy(logits, label: int):
    """Loss and gradient of -log softmax(logits)[label].

    Computed with max subtraction, so arbitrarily large logits cannot
    overflow. Returns ``(loss, gradient)`` with gradient
    softmax(logits) - onehot(label).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (NUM_CLASSES,):
        raise ValueError(f"logits must be a {NUM_CLASSES}-vector, got shape {logits.shape}")
    if not 0 <= label < NUM_CLASSES:
        raise ValueError(f"label must lie in [0, {NUM_CLASSES}), got {label}")
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[label])
    gradient = np.exp(shifted - log_norm)
    gradient[label] -= 1.0
    return loss, gradient


def _batch_losses_and_probabilities(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    losses = log_norm - shifted[np.arange(len(labels)), labels]
    probabilities = np.exp(shifted - log_norm[:, None])
    return losses, probabilities


@dataclass(frozen=True)
class LinearModel:
    """Linear softmax classifier: 7 x 2352 weights plus 7 biases."""

    weights: np.ndarray
    bias: np.ndarray
    loss_history: tuple[float, ...]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_2d(features) @ self.weights.T + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.logits(features).argmax(axis=1)


def train_linear(examples, epochs: int, learning_rate: float, seed: int) -> LinearModel:
    """Minibatch gradient descent on the softmax cross-entropy loss.

    Deterministic in ``seed``, which drives both the weight init and the
    per-epoch shuffles. The returned model records the mean training loss
    of each epoch.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("cannot train on an empty dataset")
    features = np.stack([e.features for e in examples])
    labels = np.array([e.label for e in examples])

    rng = np.random.default_rng(seed)
    weights = 0.01 * rng.standard_normal((NUM_CLASSES, FEATURE_LENGTH))
    bias = np.zeros(NUM_CLASSES)

    n = len(examples)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, _BATCH):
            batch = order[start:start + _BATCH]
            x = features[batch]
            y = labels[batch]
            logits = x @ weights.T + bias
            losses, probs = _batch_losses_and_probabilities(logits, y)
            loss_sum += losses.sum()
            grad = probs
            grad[np.arange(len(batch)), y] -= 1.0
            grad /= len(batch)
            weights -= learning_rate * (grad.T @ x)
            bias -= learning_rate * grad.sum(axis=0)
        history.append(loss_sum / n)
    return LinearModel(weights=weights, bias=bias, loss_history=tuple(history))


@dataclass(frozen=True)
class EvalReport:
    """Accuracy plus a 7x7 confusion matrix (rows true, columns predicted)."""

    accuracy: float
    confusion: np.ndarray

    def format(self) -> str:
        width = max(len(name) for name in CLASS_NAMES)
        lines = [f"accuracy: {self.accuracy:.4f}"]
        header = " " * (width + 2) + " ".join(f"{name[:4]:>5}" for name in CLASS_NAMES)
        lines.append(header)
        for name, row in zip(CLASS_NAMES, self.confusion):
            cells = " ".join(f"{int(v):>5}" for v in row)
            lines.append(f"{name:<{width}}  {cells}")
        return "\n".join(lines)


def evaluate(model: LinearModel, examples) -> EvalReport:
    """Argmax accuracy and confusion counts; invariant to example order."""
    examples = list(examples)
    if not examples:
        raise ValueError("cannot evaluate on an empty dataset")
    features = np.stack([e.features for e in examples])
    labels = np.array([e.label for e in examples])
    predicted = model.predict(features)
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    return EvalReport(accuracy=float((predicted == labels).mean()), confusion=confusion)
