"""Krippendorff's nominal alpha for binary annotation matrices with missing data."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, TextIO, Tuple

import numpy as np

from .core import AnnotationMatrix, LabelVocabulary, filter_annotators, subset_by_label

@dataclass(frozen=True)
class CoincidenceMatrix:
    """Observed coincidences ``o[c, k]`` between categories 0 and 1.

    ``units_used`` counts items with at least two responses (pairable units);
    ``excluded_units`` counts the remaining items, which contribute nothing.
    """

    o: np.ndarray
    units_used: int = 0
    excluded_units: int = 0

    @property
    def n_c(self) -> np.ndarray:
        return self.o.sum(axis=1)

    @property
    def n(self) -> float:
        return float(self.n_c.sum())


@dataclass(frozen=True)
class AlphaReport:
    scope: str
    alpha: Optional[float]
    d_o: Optional[float]
    d_e: Optional[float]
    coincidence: CoincidenceMatrix
    reason: Optional[str] = None

    @property
    def defined(self) -> bool:
        return self.alpha is not None

    def to_dict(self) -> dict:
        return {
            "scope": self.scope,
            "alpha": self.alpha,
            "reason": self.reason,
            "d_o": self.d_o,
            "d_e": self.d_e,
            "n": self.coincidence.n,
            "units_used": self.coincidence.units_used,
            "excluded_units": self.coincidence.excluded_units,
        }


def coincidences(matrix: AnnotationMatrix) -> CoincidenceMatrix:
    """Accumulate the coincidence matrix from per-unit value tallies.

    A unit with ``count_c`` copies of category c among ``m_u`` responses adds
    ``count_c (count_c - 1) / (m_u - 1)`` to ``o[c, c]`` and
    ``count_c count_k / (m_u - 1)`` to ``o[c, k]``.
    """
    m_u = matrix.responses_per_item().astype(float)
    ones = matrix.positives_per_item().astype(float)
    pairable = m_u >= 2
    excluded = int((~pairable).sum())
    m_u, ones = m_u[pairable], ones[pairable]
    zeros = m_u - ones
    weight = 1.0 / (m_u - 1.0)

    o = np.zeros((2, 2))
    o[0, 0] = np.sum(zeros * (zeros - 1.0) * weight)
    o[1, 1] = np.sum(ones * (ones - 1.0) * weight)
    o[0, 1] = o[1, 0] = np.sum(zeros * ones * weight)
    return CoincidenceMatrix(
        o=o,
        units_used=int(pairable.sum()),
        excluded_units=excluded,
    )


def disagreements(c: CoincidenceMatrix) -> Tuple[Optional[float], Optional[float]]:
    """Observed and expected disagreement (D_o, D_e); None where undefined."""
    n = c.n
    if n <= 1:
        return None, None
    d_o = (n - np.trace(c.o)) / n
    d_e = (n * n - np.sum(c.n_c ** 2)) / (n * (n - 1.0))
    return float(d_o), float(d_e)


def alpha_from_disagreement(c: CoincidenceMatrix) -> Optional[float]:
    """``1 - D_o / D_e``; the ratio route, kept separate from the closed form."""
    d_o, d_e = disagreements(c)
    if d_o is None or d_e is None or d_e <= 0:
        return None
    return 1.0 - d_o / d_e


def nominal_alpha(c: CoincidenceMatrix, scope: str = "overall") -> AlphaReport:
    n = c.n
    d_o, d_e = disagreements(c)
    if n <= 1:
        return AlphaReport(scope, None, d_o, d_e, c, reason="fewer than two pairable values")
    denominator = n * n - float(np.sum(c.n_c ** 2))
    if denominator <= 0:
        return AlphaReport(scope, None, d_o, d_e, c, reason="all values in a single category")
    alpha = 1.0 - (n - 1.0) * (n - float(np.trace(c.o))) / denominator
    return AlphaReport(scope, float(alpha), d_o, d_e, c)


def matrix_alpha(matrix: AnnotationMatrix, scope: str = "overall") -> AlphaReport:
    return nominal_alpha(coincidences(matrix), scope=scope)


def alpha_by_class(matrix: AnnotationMatrix, vocab: LabelVocabulary) -> List[AlphaReport]:
    """One report per label in vocabulary order, then the pooled overall report."""
    reports = [matrix_alpha(subset_by_label(matrix, label, vocab), scope=label) for label in vocab.labels]
    reports.append(matrix_alpha(matrix, scope="overall"))
    return reports


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    annotators_kept: int
    report: AlphaReport


def alpha_threshold_sweep(
    matrix: AnnotationMatrix,
    competences: Mapping[str, float],
    thresholds: Sequence[float],
) -> List[SweepPoint]:
    """Overall alpha after keeping only annotators with competence >= threshold."""
    missing = [a for a in matrix.annotators if a not in competences]
    if missing:
        raise KeyError(f"no competence for annotators: {missing[:5]}")
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be ascending")

    points = []
    for t in thresholds:
        keep = [a for a in matrix.annotators if competences[a] >= t]
        filtered = filter_annotators(matrix, keep)
        report = matrix_alpha(filtered, scope="overall")
        if len(keep) < 2:
            report = AlphaReport(
                "overall", None, report.d_o, report.d_e, report.coincidence, reason="fewer than two annotators"
            )
        points.append(SweepPoint(float(t), len(keep), report))
    return points


def competence_thresholds(competences: Mapping[str, float]) -> List[float]:
    """Distinct competence values in ascending order: removing annotators one level at a time."""
    return sorted(set(float(v) for v in competences.values()))


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def write_alpha_table(columns: Dict[str, List[AlphaReport]], sink: TextIO) -> None:
    """Class-wise alpha table: one row per scope, one column per annotator subset."""
    names = list(columns)
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["scope"] + names)
    scopes = [r.scope for r in columns[names[0]]] if names else []
    for i, scope in enumerate(scopes):
        writer.writerow([scope] + [_fmt(columns[name][i].alpha) for name in names])


def write_sweep(points: Sequence[SweepPoint], sink: TextIO) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["threshold", "annotators_kept", "alpha", "units_used", "reason"])
    for p in points:
        writer.writerow(
            [repr(p.threshold), p.annotators_kept, _fmt(p.report.alpha), p.report.coincidence.units_used, p.report.reason or ""]
        )
