"""Cluster-to-class assignment, confusion matrices, accuracy, overlays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClassCountMismatchError, DimensionMismatchError, EmptyClusterError, WrongKError
from .image import BACKGROUND, FIRE, SMOKE, ClassSemantics
from .io import atomic_write_bytes, save_rgb_png


@dataclass(frozen=True)
class ConfusionMatrix:
    """k x k counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionMismatchError("counts must be square")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def row_normalized(self):
        """Each row as fractions of its true-class total (zeros for empty rows)."""
        counts = self.counts.astype(float)
        sums = counts.sum(axis=1, keepdims=True)
        out = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
        return out

    def __add__(self, other):
        if self.k != other.k:
            raise ClassCountMismatchError(f"cannot pool k={self.k} with k={other.k}")
        return ConfusionMatrix(self.counts + other.counts)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    per_class_recall: tuple
    per_class_precision: tuple


def assign_semantics(labels, intensity):
    """Map the 3 clusters to fire/smoke/background by mean raw intensity.

    The cluster with the highest mean intensity becomes fire, the middle
    one smoke, the lowest background; ties break toward the lower cluster
    index. Every cluster must occur in the label map.
    """
    if labels.k != 3:
        raise WrongKError(f"semantic assignment needs k=3, got k={labels.k}")
    data = intensity.data
    if data.shape != labels.shape:
        raise DimensionMismatchError(f"intensity is {data.shape}, labels are {labels.shape}")
    flat = labels.labels.ravel()
    counts = np.bincount(flat, minlength=3)
    if np.any(counts == 0):
        missing = int(np.argmin(counts))
        raise EmptyClusterError(f"cluster {missing} has no pixels")
    sums = np.bincount(flat, weights=data.ravel(), minlength=3)
    means = sums / counts
    order = sorted(range(3), key=lambda c: (-means[c], c))
    mapping = [None, None, None]
    mapping[order[0]] = FIRE
    mapping[order[1]] = SMOKE
    mapping[order[2]] = BACKGROUND
    return ClassSemantics(tuple(mapping))


def confusion(pred, truth):
    """Confusion counts: entry (m, n) is the number of pixels truly m, predicted n."""
    if pred.shape != truth.shape:
        raise DimensionMismatchError(f"prediction is {pred.shape}, truth is {truth.shape}")
    if pred.k != truth.k:
        raise ClassCountMismatchError(f"prediction has k={pred.k}, truth has k={truth.k}")
    k = pred.k
    idx = truth.labels.ravel() * k + pred.labels.ravel()
    counts = np.bincount(idx, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


def metrics(cm):
    """Accuracy plus per-class recall and precision (empty rows/columns give 0)."""
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    counts = cm.counts.astype(float)
    diag = np.diag(counts)
    row_sums = counts.sum(axis=1)
    col_sums = counts.sum(axis=0)
    recall = np.divide(diag, row_sums, out=np.zeros_like(diag), where=row_sums > 0)
    precision = np.divide(diag, col_sums, out=np.zeros_like(diag), where=col_sums > 0)
    return Metrics(
        accuracy=float(diag.sum() / total),
        per_class_recall=tuple(float(r) for r in recall),
        per_class_precision=tuple(float(p) for p in precision),
    )


def render_overlay(frame, labels, semantics=None, path=None):
    """Blend class tints over the grayscale frame and optionally write a PNG.

    Background keeps the plain intensity; smoke pixels are averaged with
    pure blue, fire pixels with pure red. Pass ``semantics=None`` when the
    labels are already in semantic space.
    """
    if frame.shape != labels.shape:
        raise DimensionMismatchError(f"frame is {frame.shape}, labels are {labels.shape}")
    semantic = labels if semantics is None else semantics.apply(labels)
    gray = np.round(frame.data * 255.0).astype(np.int64)
    rgb = np.stack([gray, gray, gray], axis=-1)
    lab = semantic.labels
    fire = lab == FIRE
    smoke = lab == SMOKE
    rgb[fire, 0] = (gray[fire] + 255) // 2
    rgb[fire, 1] = gray[fire] // 2
    rgb[fire, 2] = gray[fire] // 2
    rgb[smoke, 0] = gray[smoke] // 2
    rgb[smoke, 1] = gray[smoke] // 2
    rgb[smoke, 2] = (gray[smoke] + 255) // 2
    rgb = rgb.astype(np.uint8)
    if path is not None:
        save_rgb_png(rgb, path)
    return rgb


def metrics_report(cm):
    """JSON-ready dict with counts, row-normalized rates, accuracy, per-class rates."""
    m = metrics(cm)
    return {
        "counts": cm.counts.tolist(),
        "row_normalized": [[round(v, 9) for v in row] for row in cm.row_normalized()],
        "accuracy": m.accuracy,
        "per_class": {
            "recall": list(m.per_class_recall),
            "precision": list(m.per_class_precision),
        },
    }


def write_confusion_csv(cm, path, class_names=None):
    """Confusion counts as CSV with true classes on rows."""
    k = cm.k
    names = list(class_names) if class_names else [f"class_{i}" for i in range(k)]
    lines = ["true\\pred," + ",".join(names)]
    for i in range(k):
        lines.append(names[i] + "," + ",".join(str(int(v)) for v in cm.counts[i]))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))
