"""Accuracy metrics, chunk-to-file aggregation, repetition statistics and reports."""

from __future__ import annotations

import json
import math
from collections import Counter, OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InvalidInput


@dataclass
class PredictionSet:
    probabilities: np.ndarray  # N x C
    labels: np.ndarray  # N
    file_ids: List[str]

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probabilities.ndim != 2:
            raise InvalidInput("probabilities must be N x n_classes")
        n = self.probabilities.shape[0]
        if self.labels.shape != (n,) or len(self.file_ids) != n:
            raise InvalidInput("probabilities, labels and file_ids disagree in length")
        if n and (np.any(self.probabilities < 0) or not np.allclose(self.probabilities.sum(axis=1), 1.0, atol=1e-6)):
            raise InvalidInput("each probability row must be non-negative and sum to 1")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def predicted(self) -> np.ndarray:
        # np.argmax breaks ties toward the lowest class index
        return np.argmax(self.probabilities, axis=1)

    @property
    def n_classes(self) -> int:
        return self.probabilities.shape[1]


def _weighted_accuracy(pred, labels, n_classes, weights) -> float:
    if weights is None:
        present = np.unique(labels)
        weights = np.zeros(n_classes)
        weights[present] = 1.0 / len(present)
    weights = np.asarray(weights, dtype=np.float64)
    total = 0.0
    norm = 0.0
    for c in range(n_classes):
        sel = labels == c
        if sel.any() and weights[c] > 0:
            total += weights[c] * np.mean(pred[sel] == c)
            norm += weights[c]
    return total / norm


def chunk_accuracy(preds: PredictionSet, weighted: bool = False, class_weights: Optional[Sequence[float]] = None) -> float:
    """Fraction of chunks whose argmax class equals the label.

    With ``weighted`` the per-class accuracies are averaged under
    ``class_weights`` (equal weights over present classes by default).
    """
    if len(preds) == 0:
        raise InvalidInput("no predictions")
    if weighted:
        return _weighted_accuracy(preds.predicted, preds.labels, preds.n_classes, class_weights)
    return float(np.mean(preds.predicted == preds.labels))


@dataclass
class FilePrediction:
    file_id: str
    predicted: int
    probabilities: np.ndarray
    label: int
    n_chunks: int


def file_level_aggregate(preds: PredictionSet) -> List[FilePrediction]:
    """Soft vote: each file takes the argmax of its chunks' mean probability vector."""
    groups: "OrderedDict[str, List[int]]" = OrderedDict()
    for i, fid in enumerate(preds.file_ids):
        groups.setdefault(fid, []).append(i)
    out = []
    for fid, idx in groups.items():
        labels = set(preds.labels[idx].tolist())
        if len(labels) != 1:
            raise InvalidInput(f"chunks of {fid} carry different labels {sorted(labels)}")
        mean = preds.probabilities[idx].mean(axis=0)
        out.append(FilePrediction(fid, int(np.argmax(mean)), mean, labels.pop(), len(idx)))
    return out


def file_accuracy(preds: PredictionSet, weighted: bool = False, class_weights=None) -> float:
    files = file_level_aggregate(preds)
    if not files:
        raise InvalidInput("no predictions")
    pred = np.array([f.predicted for f in files])
    labels = np.array([f.label for f in files])
    if weighted:
        return _weighted_accuracy(pred, labels, preds.n_classes, class_weights)
    return float(np.mean(pred == labels))


@dataclass
class RepetitionStats:
    n: int
    mean: float
    std: Optional[float]
    std_of_mean: Optional[float]


def repetition_stats(values: Sequence[float]) -> RepetitionStats:
    """Mean, sample standard deviation (n - 1) and standard deviation of the mean."""
    values = [float(v) for v in values]
    if not values:
        raise InvalidInput("no values")
    n = len(values)
    # math.fsum keeps the result independent of input order
    mean = math.fsum(values) / n
    if n < 2:
        return RepetitionStats(n, mean, None, None)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    return RepetitionStats(n, mean, std, std / math.sqrt(n))


def majority_baseline(labels: Sequence) -> float:
    """Accuracy of always predicting the most frequent class."""
    labels = list(labels)
    if not labels:
        raise InvalidInput("no labels")
    return Counter(labels).most_common(1)[0][1] / len(labels)


def class_counts(preds: PredictionSet) -> Dict[str, Dict[str, int]]:
    pred = preds.predicted
    return {
        str(c): {"true": int(np.sum(preds.labels == c)), "predicted": int(np.sum(pred == c))}
        for c in range(preds.n_classes)
    }


@dataclass
class MetricReport:
    chunk_accuracy: float
    file_accuracy: float
    per_class: Dict[str, Dict[str, int]] = field(default_factory=dict)
    majority_baseline: Optional[float] = None

    @classmethod
    def from_predictions(cls, preds: PredictionSet) -> "MetricReport":
        return cls(
            chunk_accuracy=chunk_accuracy(preds),
            file_accuracy=file_accuracy(preds),
            per_class=class_counts(preds),
            majority_baseline=majority_baseline(preds.labels.tolist()),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_runs(accuracies: Sequence[float], level: str) -> dict:
    s = repetition_stats(accuracies)
    return {"level": level, "n": s.n, "mean": s.mean, "std": s.std, "std_of_mean": s.std_of_mean}


def format_table(rows: Sequence[dict], percent: bool = True) -> str:
    """Aligned plain-text table of ``model | technique | mean ± std`` rows."""
    scale = 100.0 if percent else 1.0
    cells = [("Task", "Model", "Pretraining technique", "Accuracy")]
    for row in rows:
        mean = row["mean"] * scale
        acc = f"{mean:.2f}" if row.get("std") is None else f"{mean:.2f} ± {row['std'] * scale:.2f}"
        cells.append((row.get("task", ""), row.get("model", ""), row.get("technique", ""), acc))
    widths = [max(len(r[i]) for r in cells) for i in range(4)]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [sep]
    for j, r in enumerate(cells):
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
        if j == 0:
            lines.append(sep)
    lines.append(sep)
    return "\n".join(lines)


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
