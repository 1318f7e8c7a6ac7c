"""Linear-probe evaluation, accuracy/forgetting, and calibration metrics.

The probe is a softmax regression trained on frozen pre-projector encoder
features; the encoder is never touched. Calibration uses equal-width
confidence bins over the winning softmax score; a score of exactly 1.0
falls in the last bin, and argmax ties break toward the lowest class id.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import PrototypeSet
from .model import ModelParams, encode_np


@dataclass
class BinStats:
    """Per-bin prediction statistics over M equal confidence intervals."""

    num_bins: int
    counts: np.ndarray
    acc: np.ndarray
    conf: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_bins + 1)


@dataclass
class MetricsReport:
    run_id: str
    average_accuracy: float
    forgetting: float | None
    ece_per_task: list[float]
    oe_per_task: list[float]
    aece: float
    aoe: float
    nc1: float
    nc2: float
    nc3: float

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "average_accuracy": self.average_accuracy,
            "forgetting": self.forgetting,
            "ece_per_task": self.ece_per_task,
            "oe_per_task": self.oe_per_task,
            "aece": self.aece,
            "aoe": self.aoe,
            "nc1": self.nc1,
            "nc2": self.nc2,
            "nc3": self.nc3,
        }


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def train_probe(params: ModelParams, probe_x: np.ndarray, probe_y: np.ndarray,
                num_classes: int, epochs: int = 100,
                base_lr: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Softmax regression on frozen encoder features.

    Full-batch SGD with momentum 0.9, no weight decay; the learning rate
    drops by 0.2 at 60/75/90% of the epoch budget.
    """
    probe_x = np.asarray(probe_x, dtype=np.float64)
    probe_y = np.asarray(probe_y)
    if probe_x.shape[0] == 0:
        raise ValueError("train_probe: empty probe data")
    feats = encode_np(params, probe_x)
    n, fdim = feats.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), probe_y] = 1.0

    w = np.zeros((fdim, num_classes))
    b = np.zeros(num_classes)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    drops = {int(epochs * 0.6), int(epochs * 0.75), int(epochs * 0.9)}
    lr = base_lr
    for epoch in range(epochs):
        if epoch in drops:
            lr *= 0.2
        probs = _softmax(feats @ w + b)
        delta = (probs - onehot) / n
        gw = feats.T @ delta
        gb = delta.sum(axis=0)
        vw = 0.9 * vw + gw
        vb = 0.9 * vb + gb
        w -= lr * vw
        b -= lr * vb
    return w, b


def probe_logits(params: ModelParams, classifier, x: np.ndarray) -> np.ndarray:
    w, b = classifier
    return encode_np(params, x) @ w + b


def eval_accuracy(params: ModelParams, classifier, tasks,
                  scenario: str = "class_il") -> list[float]:
    """Accuracy (percent) on each task's test set.

    class_il: argmax over all classes. task_il: argmax restricted to the
    task's class set (the task identity is available at test time).
    """
    if scenario not in ("class_il", "task_il"):
        raise ValueError(f"eval_accuracy: unknown scenario {scenario!r}")
    row = []
    for task in tasks:
        logits = probe_logits(params, classifier, task.test_x)
        if scenario == "task_il":
            masked = np.full_like(logits, -np.inf)
            masked[:, task.classes] = logits[:, task.classes]
            logits = masked
        pred = np.argmax(logits, axis=1)
        row.append(100.0 * float(np.mean(pred == task.test_y)))
    return row


def calibration_predictions(params: ModelParams, classifier,
                            x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(winning score, correct) pairs under the all-class softmax."""
    probs = _softmax(probe_logits(params, classifier, x))
    pred = np.argmax(probs, axis=1)
    scores = probs[np.arange(len(pred)), pred]
    return np.column_stack([scores, (pred == np.asarray(y)).astype(float)])


def average_accuracy(acc_matrix: np.ndarray) -> float:
    """Mean of the final row of the lower-triangular accuracy matrix."""
    a = np.asarray(acc_matrix, dtype=np.float64)
    t = a.shape[0]
    return float(np.mean(a[t - 1, :t]))


def average_forgetting(acc_matrix: np.ndarray) -> float:
    """Mean over earlier tasks of peak accuracy minus final accuracy."""
    a = np.asarray(acc_matrix, dtype=np.float64)
    t = a.shape[0]
    if t < 2:
        raise ValueError("average_forgetting: need at least 2 tasks")
    drops = [np.max(a[i:t - 1, i]) - a[t - 1, i] for i in range(t - 1)]
    return float(np.mean(drops))


def bin_stats(predictions, num_bins: int) -> BinStats:
    """Assign predictions to M equal-width score bins."""
    preds = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    if num_bins < 1:
        raise ValueError(f"bin_stats: need at least 1 bin, got {num_bins}")
    scores, correct = preds[:, 0], preds[:, 1]
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ValueError("bin_stats: scores must lie in [0, 1]")
    idx = np.minimum((scores * num_bins).astype(int), num_bins - 1)
    counts = np.bincount(idx, minlength=num_bins).astype(float)
    acc = np.zeros(num_bins)
    conf = np.zeros(num_bins)
    nonempty = counts > 0
    acc[nonempty] = np.bincount(idx, weights=correct,
                                minlength=num_bins)[nonempty] / counts[nonempty]
    conf[nonempty] = np.bincount(idx, weights=scores,
                                 minlength=num_bins)[nonempty] / counts[nonempty]
    return BinStats(num_bins, counts, acc, conf)


def ece(predictions, num_bins: int) -> float:
    """Expected calibration error; empty bins contribute 0."""
    stats = bin_stats(predictions, num_bins)
    n = stats.counts.sum()
    if n == 0:
        return 0.0
    return float(np.sum(stats.counts / n * np.abs(stats.acc - stats.conf)))


def oe(predictions, num_bins: int) -> float:
    """Overconfidence error: penalizes bins whose confidence exceeds accuracy."""
    stats = bin_stats(predictions, num_bins)
    n = stats.counts.sum()
    if n == 0:
        return 0.0
    excess = np.maximum(stats.conf - stats.acc, 0.0)
    return float(np.sum(stats.counts / n * stats.conf * excess))


def aece_aoe(per_task_predictions, num_bins: int = 15) -> tuple[float, float]:
    """Plain means of per-task ECE and OE after the final task."""
    eces = [ece(p, num_bins) for p in per_task_predictions]
    oes = [oe(p, num_bins) for p in per_task_predictions]
    return float(np.mean(eces)), float(np.mean(oes))


def reliability_rows(per_task_predictions, num_bins: int) -> list[tuple]:
    """Rows (task, bin_lo, bin_hi, count, acc, conf) for CSV export."""
    rows = []
    for task_idx, preds in enumerate(per_task_predictions):
        stats = bin_stats(preds, num_bins)
        edges = stats.edges
        for m in range(num_bins):
            rows.append((task_idx, float(edges[m]), float(edges[m + 1]),
                         int(stats.counts[m]), float(stats.acc[m]),
                         float(stats.conf[m])))
    return rows


def nc_diagnostics(features_by_class: dict[int, np.ndarray],
                   prototypes: PrototypeSet) -> tuple[float, float, float]:
    """Collapse diagnostics over class-grouped features.

    nc1: mean within-class variance trace. nc2: worst deviation of
    centered-class-mean pairwise cosines from -1/(K-1). nc3: mean cosine
    between centered class means and their prototypes.
    """
    means = {}
    traces = []
    for cls, feats in sorted(features_by_class.items()):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape[0] < 2:
            warnings.warn(f"nc_diagnostics: class {cls} has fewer than 2 "
                          f"samples, skipping")
            continue
        mu = feats.mean(axis=0)
        means[cls] = mu
        traces.append(float(np.mean(np.sum((feats - mu) ** 2, axis=1))))
    if len(means) < 2:
        raise ValueError("nc_diagnostics: need at least 2 usable classes")
    nc1 = float(np.mean(traces))

    classes = sorted(means)
    k = len(classes)
    mu_mat = np.array([means[c] for c in classes])
    mu_g = mu_mat.mean(axis=0)
    centered = mu_mat - mu_g
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    tilde = centered / norms
    cosines = tilde @ tilde.T
    target = -1.0 / (k - 1)
    off = cosines[~np.eye(k, dtype=bool)]
    nc2 = float(np.max(np.abs(off - target)))

    nc3 = float(np.mean([tilde[i] @ prototypes[c]
                         for i, c in enumerate(classes)]))
    return nc1, nc2, nc3
