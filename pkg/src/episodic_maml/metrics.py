"""Query-set metrics, their aggregation, count-weighted averaging and the
train-from-scratch baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .episodes import Episode
from .mlp import MlpArchitecture, MlpParameters, forward, init_parameters, loss_gradient, nll_from_logits


@dataclass(frozen=True)
class MetricsRecord:
    accuracy: float
    precision: float
    recall: float
    loss: float
    batch_index: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {"batch_index": self.batch_index, "accuracy": self.accuracy, "precision": self.precision,
             "recall": self.recall, "loss": self.loss}
        )

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index.
    return np.argmax(logits, axis=1)


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return counts


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def scores_from_confusion(confusion: np.ndarray) -> tuple[float, float, float]:
    """Accuracy plus macro one-vs-rest precision and recall (0/0 counts as 0)."""
    tp = np.diag(confusion).astype(np.float64)
    precision = _safe_ratio(tp, confusion.sum(axis=0).astype(np.float64))
    recall = _safe_ratio(tp, confusion.sum(axis=1).astype(np.float64))
    return float(tp.sum() / confusion.sum()), float(precision.mean()), float(recall.mean())


def episode_metrics(logits: np.ndarray, labels, batch_index: int = 0) -> MetricsRecord:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n_classes = logits.shape[1]
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows vs {labels.shape[0]} labels")
    if labels.size == 0 or labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    confusion = confusion_matrix(labels, predict(logits), n_classes)
    accuracy, precision, recall = scores_from_confusion(confusion)
    return MetricsRecord(accuracy, precision, recall, nll_from_logits(logits, labels), batch_index)


def aggregate_metrics(records: Sequence[MetricsRecord], batch_index: int = 0) -> MetricsRecord:
    """Unweighted mean of every metric field."""
    if not records:
        raise ValueError("cannot aggregate an empty list of records")
    n = len(records)
    return MetricsRecord(
        accuracy=sum(r.accuracy for r in records) / n,
        precision=sum(r.precision for r in records) / n,
        recall=sum(r.recall for r in records) / n,
        loss=sum(r.loss for r in records) / n,
        batch_index=batch_index,
    )


def weighted_average(values: Sequence[float], counts: Sequence[int]) -> float:
    """Mean of ``values`` weighted by class instance ``counts``."""
    values = np.asarray(values, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if values.shape != counts.shape:
        raise ValueError(f"{values.size} values vs {counts.size} counts")
    total = counts.sum()
    if total <= 0:
        raise ValueError("total count must be positive")
    return float((values * counts).sum() / total)


def scratch_baseline(
    episode: Episode,
    steps: int,
    alpha: float,
    seed: int,
    hidden_widths: Sequence[int] = (80, 80, 80),
    activation: str = "relu",
    zero_output_layer: bool = False,
) -> MetricsRecord:
    """Train a fresh network on the support set only, then score the query set."""
    arch = MlpArchitecture(episode.support.features.shape[1], episode.n_way, tuple(hidden_widths), activation)
    theta = init_parameters(arch, seed)
    if zero_output_layer:
        layers = theta.layers
        w, b = layers[-1]
        layers[-1] = (np.zeros_like(w), np.zeros_like(b))
        theta = MlpParameters.from_layers(arch, layers)
    for _ in range(steps):
        _, grad = loss_gradient(theta, episode.support)
        theta = theta - alpha * grad
    return episode_metrics(forward(theta, episode.query), episode.query.labels)


def write_jsonl(path, records: Iterable[MetricsRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def read_jsonl(path) -> list[MetricsRecord]:
    with open(path, encoding="utf-8") as fh:
        return [MetricsRecord.from_json(line) for line in fh if line.strip()]

