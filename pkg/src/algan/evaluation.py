"""Anomaly scores from the discriminator and ranking metrics over them.

The anomaly score is the negated pre-sigmoid discriminator output, so higher
means more anomalous.  AUROC is the Mann-Whitney statistic with half credit
for exact ties.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, MetricError
from .nn import Network

NORMAL, ANOMALOUS = 0, 1


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels).reshape(-1).astype(np.int64)
        if scores.shape != labels.shape:
            raise MetricError(f"{len(scores)} scores but {len(labels)} labels")
        if not np.isin(labels, (NORMAL, ANOMALOUS)).all():
            raise MetricError("labels must be 0 (normal) or 1 (anomalous)")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n_normal(self) -> int:
        return int((self.labels == NORMAL).sum())

    @property
    def n_anomalous(self) -> int:
        return int((self.labels == ANOMALOUS).sum())

    @property
    def has_both_classes(self) -> bool:
        return self.n_normal > 0 and self.n_anomalous > 0


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auroc: float


def anomaly_score(disc: Network, x) -> np.ndarray:
    """Negated discriminator logits, computed in eval mode."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != disc.in_dim:
        raise DimensionError(f"discriminator expects [n x {disc.in_dim}], got {x.shape}")
    return -disc.forward(x, "eval").data.reshape(-1)


def classify(scores, threshold: float) -> np.ndarray:
    """Boolean mask, True where ``score > threshold`` (anomalous)."""
    if np.isnan(threshold):
        raise MetricError("threshold must not be NaN")
    return np.asarray(scores, dtype=np.float64) > threshold


def _as_set(scores, labels=None) -> ScoredSet:
    if isinstance(scores, ScoredSet):
        return scores
    return ScoredSet(scores, labels)


def auroc(scores, labels=None) -> float:
    """P(anomalous score > normal score) + 0.5 P(tie), via average ranks."""
    s = _as_set(scores, labels)
    if not s.has_both_classes:
        raise MetricError("AUROC needs at least one normal and one anomalous sample")
    order = np.argsort(s.scores, kind="mergesort")
    sorted_scores = s.scores[order]
    ranks = np.empty(len(order))
    # average 1-based rank over each run of exactly equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(order)]])
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    n_a, n_n = s.n_anomalous, s.n_normal
    rank_sum = ranks[s.labels == ANOMALOUS].sum()
    u = rank_sum - n_a * (n_a + 1) / 2.0
    return float(u / (n_a * n_n))


def roc_curve(scores, labels=None) -> RocCurve:
    """ROC points from thresholds at every distinct score, from (0,0) to (1,1)."""
    s = _as_set(scores, labels)
    if not s.has_both_classes:
        raise MetricError("ROC needs at least one normal and one anomalous sample")
    order = np.argsort(-s.scores, kind="mergesort")
    sc = s.scores[order]
    pos = (s.labels[order] == ANOMALOUS).astype(np.float64)
    last_of_run = np.r_[np.flatnonzero(np.diff(sc)), len(sc) - 1]
    tps = np.cumsum(pos)[last_of_run]
    fps = (last_of_run + 1) - tps
    tpr = np.r_[0.0, tps / s.n_anomalous]
    fpr = np.r_[0.0, fps / s.n_normal]
    # flagged means score > threshold: each threshold sits midway to the next lower score
    run_scores = sc[last_of_run]
    mids = (run_scores[:-1] + run_scores[1:]) / 2.0
    mids = np.where(mids < run_scores[:-1], mids, run_scores[1:])  # adjacent floats: fall back to the lower score
    thresholds = np.r_[np.inf, mids, -np.inf]
    return RocCurve(fpr, tpr, thresholds, auroc(s))


def youden_threshold(scores, labels=None) -> float:
    """Threshold maximizing TPR - FPR under the ``score > threshold`` rule."""
    curve = roc_curve(scores, labels)
    j = curve.tpr - curve.fpr
    return float(curve.thresholds[int(np.argmax(j))])


def confusion_counts(scores, labels, threshold: float) -> dict[str, int]:
    s = _as_set(scores, labels)
    pred = classify(s.scores, threshold)
    truth = s.labels == ANOMALOUS
    return {
        "tp": int((pred & truth).sum()),
        "fp": int((pred & ~truth).sum()),
        "tn": int((~pred & ~truth).sum()),
        "fn": int((~pred & truth).sum()),
    }


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    count_normal: np.ndarray
    count_anomalous: np.ndarray


def histogram_export(scores, labels=None, bins: int = 50) -> Histogram:
    """Per-class counts over shared bins spanning all scores."""
    s = _as_set(scores, labels)
    if len(s.scores) == 0:
        raise MetricError("cannot histogram an empty set")
    if int(bins) < 1:
        raise MetricError(f"bins must be >= 1, got {bins}")
    lo, hi = float(s.scores.min()), float(s.scores.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, int(bins) + 1)
    cn, _ = np.histogram(s.scores[s.labels == NORMAL], bins=edges)
    ca, _ = np.histogram(s.scores[s.labels == ANOMALOUS], bins=edges)
    return Histogram(edges, cn, ca)


def write_scores(path: str | os.PathLike, scores, labels=None, sample_ids: Sequence | None = None) -> None:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    ids = range(len(scores)) if sample_ids is None else sample_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "score", "label"])
        for i, (sid, sc) in enumerate(zip(ids, scores)):
            w.writerow([sid, repr(float(sc)), "" if labels is None else int(labels[i])])


def read_scores(path: str | os.PathLike) -> tuple[list[str], np.ndarray, np.ndarray | None]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = [r["sample_id"] for r in rows]
    scores = np.array([float(r["score"]) for r in rows])
    labels = None if any(r["label"] == "" for r in rows) else np.array([int(r["label"]) for r in rows])
    return ids, scores, labels


def write_histogram(path: str | os.PathLike, hist: Histogram) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count_normal", "count_anomalous"])
        for left, right, cn, ca in zip(hist.edges[:-1], hist.edges[1:], hist.count_normal, hist.count_anomalous):
            w.writerow([repr(float(left)), repr(float(right)), int(cn), int(ca)])
