"""Union and majority-vote aggregation, plus per-label / per-file label statistics."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Mapping, TextIO

import numpy as np

from .core import AnnotationMatrix, LabelVocabulary
from .mace import GroundTruthEstimate


def union_vote(matrix: AnnotationMatrix) -> GroundTruthEstimate:
    """Label present if any annotator selected it."""
    m_u = matrix.responses_per_item()
    pos = matrix.positives_per_item()
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(m_u > 0, pos / np.maximum(m_u, 1), 0.0)
    return GroundTruthEstimate(
        items=matrix.items,
        decisions=(pos > 0).astype(np.int8),
        confidence=frac.astype(float),
        kept=np.ones(len(matrix.items), dtype=bool),
        method="union",
    )


def majority_vote(matrix: AnnotationMatrix) -> GroundTruthEstimate:
    """Label present if strictly more than half of the responses selected it.

    Ties and unanswered items resolve to absent.
    """
    m_u = matrix.responses_per_item()
    pos = matrix.positives_per_item()
    frac = np.where(m_u > 0, pos / np.maximum(m_u, 1), 0.0)
    return GroundTruthEstimate(
        items=matrix.items,
        decisions=(2 * pos > m_u).astype(np.int8),
        confidence=np.maximum(frac, 1.0 - frac),
        kept=np.ones(len(matrix.items), dtype=bool),
        method="majority",
    )


@dataclass
class LabelStatistics:
    method: str
    per_label_counts: Dict[str, int]
    labels_per_file: Dict[str, int]

    @property
    def mean_labels_per_file(self) -> float:
        if not self.labels_per_file:
            return 0.0
        return sum(self.labels_per_file.values()) / len(self.labels_per_file)

    def histogram(self) -> Dict[int, int]:
        """Number of files carrying k labels, for k = 0 .. max."""
        counts = Counter(self.labels_per_file.values())
        top = max(counts, default=0)
        return {k: counts.get(k, 0) for k in range(top + 1)}


def label_statistics(estimate: GroundTruthEstimate, vocab: LabelVocabulary) -> LabelStatistics:
    files = sorted({item.file_id for item in estimate.items})
    present = set(estimate.items)
    for f in files:
        for label in vocab.labels:
            if (f, label) not in present:
                raise ValueError(f"estimate is missing item ({f!r}, {label!r})")

    per_label = {label: 0 for label in vocab.labels}
    per_file = {f: 0 for f in files}
    for item, positive in zip(estimate.items, estimate.positives()):
        if positive:
            per_label[item.label] += 1
            per_file[item.file_id] += 1
    return LabelStatistics(estimate.method, per_label, per_file)


def write_label_table(stats: Mapping[str, LabelStatistics], sink: TextIO) -> None:
    """Per-label positive counts, one column per method, rows by union count descending.

    Falls back to the first method's counts for ordering when no union column
    is present; ties keep vocabulary order.
    """
    methods = list(stats)
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["label"] + methods)
    if not methods:
        return
    key = "union" if "union" in stats else methods[0]
    labels = list(stats[key].per_label_counts)
    labels.sort(key=lambda label: -stats[key].per_label_counts[label])
    for label in labels:
        writer.writerow([label] + [stats[m].per_label_counts[label] for m in methods])


def histogram_series(stats: Mapping[str, LabelStatistics]) -> Dict[str, dict]:
    return {
        method: {
            "mean_labels_per_file": s.mean_labels_per_file,
            "files_with_k_labels": {str(k): v for k, v in s.histogram().items()},
        }
        for method, s in stats.items()
    }


def write_decisions(estimate: GroundTruthEstimate, sink: TextIO) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["file_id", "label", "decision", "confidence", "kept"])
    for item, d, c, k in zip(estimate.items, estimate.decisions, estimate.confidence, estimate.kept):
        writer.writerow([item.file_id, item.label, int(d), repr(float(c)), int(bool(k))])


def accuracy(estimate: GroundTruthEstimate, truth: Mapping, only_kept: bool = False) -> float:
    """Fraction of items whose decision matches ``truth`` (keyed by ItemId)."""
    hits: List[bool] = []
    for item, d, k in zip(estimate.items, estimate.decisions, estimate.kept):
        if only_kept and not k:
            continue
        hits.append(int(d) == int(truth[item]))
    return float(np.mean(hits)) if hits else float("nan")
