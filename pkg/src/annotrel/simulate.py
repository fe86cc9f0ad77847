"""Forward simulation of annotation campaigns with planted truth."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .core import AnnotationMatrix, ItemId, LabelVocabulary

DEFAULT_LABELS = (
    "birds_singing",
    "dog_barking",
    "adults_talking",
    "children_voices",
    "traffic_noise",
    "music",
    "footsteps",
    "siren",
    "announcement_speech",
    "announcement_jingle",
)


@dataclass
class CampaignSpec:
    """Generative parameters for a synthetic campaign.

    ``competence`` and ``spam_dist`` hold one entry per annotator (index order).
    With ``annotators_per_file`` set, each file is instead given exactly that
    many distinct annotators and ``files_per_annotator`` is ignored.
    """

    num_files: int
    vocab: LabelVocabulary
    num_annotators: int
    files_per_annotator: int
    competence: np.ndarray
    spam_dist: np.ndarray
    truth_prevalence: Dict[str, float] = field(default_factory=dict)
    seed: int = 0
    annotators_per_file: Optional[int] = None

    def __post_init__(self):
        self.competence = np.broadcast_to(np.asarray(self.competence, dtype=float), (self.num_annotators,)).copy()
        self.spam_dist = np.broadcast_to(np.asarray(self.spam_dist, dtype=float), (self.num_annotators, 2)).copy()
        if self.num_files < 1 or self.num_annotators < 1:
            raise ValueError("num_files and num_annotators must be positive")
        if ((self.competence < 0) | (self.competence > 1)).any():
            raise ValueError("competence values must lie in [0, 1]")
        if (self.spam_dist < 0).any() or not np.allclose(self.spam_dist.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("spam_dist rows must be probability vectors")
        prevalence = {label: 0.5 for label in self.vocab.labels}
        for label, p in dict(self.truth_prevalence).items():
            if label not in self.vocab:
                raise ValueError(f"prevalence given for unknown label {label!r}")
            if not 0 <= p <= 1:
                raise ValueError("prevalence must lie in [0, 1]")
            prevalence[label] = float(p)
        self.truth_prevalence = prevalence
        if self.annotators_per_file is not None:
            if not 1 <= self.annotators_per_file <= self.num_annotators:
                raise ValueError("annotators_per_file must be in [1, num_annotators]")
        elif not 1 <= self.files_per_annotator <= self.num_files:
            raise ValueError(
                f"cannot assign {self.files_per_annotator} distinct files out of {self.num_files}"
            )

    def file_ids(self) -> List[str]:
        width = len(str(self.num_files - 1))
        return [f"file{i:0{width}d}" for i in range(self.num_files)]

    def annotator_ids(self) -> List[str]:
        width = len(str(self.num_annotators - 1))
        return [f"annotator{j:0{width}d}" for j in range(self.num_annotators)]

    def to_dict(self) -> dict:
        return {
            "num_files": self.num_files,
            "labels": list(self.vocab.labels),
            "num_annotators": self.num_annotators,
            "files_per_annotator": self.files_per_annotator,
            "annotators_per_file": self.annotators_per_file,
            "competence": [float(x) for x in self.competence],
            "spam_dist": [[float(p) for p in row] for row in self.spam_dist],
            "truth_prevalence": dict(self.truth_prevalence),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CampaignSpec":
        return cls(
            num_files=int(data["num_files"]),
            vocab=LabelVocabulary(tuple(data.get("labels", DEFAULT_LABELS))),
            num_annotators=int(data["num_annotators"]),
            files_per_annotator=int(data.get("files_per_annotator", 1)),
            competence=data.get("competence", 0.0),
            spam_dist=data.get("spam_dist", (0.5, 0.5)),
            truth_prevalence=_prevalence(data.get("truth_prevalence", {}), data.get("labels", DEFAULT_LABELS)),
            seed=int(data.get("seed", 0)),
            annotators_per_file=data.get("annotators_per_file"),
        )


def _prevalence(value: Union[float, Mapping[str, float]], labels: Sequence[str]) -> Dict[str, float]:
    if isinstance(value, Mapping):
        return dict(value)
    return {label: float(value) for label in labels}


@dataclass
class SyntheticCampaign:
    spec: CampaignSpec
    matrix: AnnotationMatrix
    truth: np.ndarray
    spam_events: np.ndarray

    def truth_map(self) -> Dict[ItemId, int]:
        return {item: int(t) for item, t in zip(self.matrix.items, self.truth)}

    def annotator_competence(self) -> Dict[str, float]:
        return {a: float(t) for a, t in zip(self.matrix.annotators, self.spec.competence)}


def _assign(spec: CampaignSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """(file, annotator) pairs, sorted by file then annotator."""
    if spec.annotators_per_file is not None:
        k = spec.annotators_per_file
        anns = np.stack([rng.choice(spec.num_annotators, size=k, replace=False) for _ in range(spec.num_files)])
        files = np.repeat(np.arange(spec.num_files), k)
        anns = anns.reshape(-1)
    else:
        k = spec.files_per_annotator
        files = np.concatenate([rng.choice(spec.num_files, size=k, replace=False) for _ in range(spec.num_annotators)])
        anns = np.repeat(np.arange(spec.num_annotators), k)
    order = np.lexsort((anns, files))
    return files[order], anns[order]


def generate_campaign(spec: CampaignSpec) -> SyntheticCampaign:
    """Draw truth, assignments, spam indicators and responses from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n_labels = len(spec.vocab)
    prevalence = np.array([spec.truth_prevalence[label] for label in spec.vocab.labels])
    truth = (rng.random((spec.num_files, n_labels)) < prevalence).astype(np.int8).reshape(-1)

    files, anns = _assign(spec, rng)
    rows = (files[:, None] * n_labels + np.arange(n_labels)).reshape(-1)
    cols = np.repeat(anns, n_labels)
    spam = (rng.random(rows.size) >= spec.competence[cols]).astype(np.int8)
    spam_value = (rng.random(rows.size) < spec.spam_dist[cols, 1]).astype(np.int8)
    values = np.where(spam == 1, spam_value, truth[rows]).astype(np.int8)

    # match the matrix's (row, col) cell order so spam_events aligns with its cells
    order = np.lexsort((cols, rows))
    rows, cols, values, spam = rows[order], cols[order], values[order], spam[order]
    items = [ItemId(f, label) for f in spec.file_ids() for label in spec.vocab.labels]
    matrix = AnnotationMatrix(items, spec.annotator_ids(), rows, cols, values)
    return SyntheticCampaign(spec=spec, matrix=matrix, truth=truth, spam_events=spam)


def generate_spammers(
    num_annotators: int = 150,
    files_per_annotator: int = 130,
    num_files: int = 3930,
    vocab: Optional[LabelVocabulary] = None,
    seed: int = 0,
) -> SyntheticCampaign:
    """Population of pure coin-flip annotators (zero competence, uniform spam)."""
    spec = CampaignSpec(
        num_files=num_files,
        vocab=vocab or LabelVocabulary(DEFAULT_LABELS),
        num_annotators=num_annotators,
        files_per_annotator=files_per_annotator,
        competence=0.0,
        spam_dist=(0.5, 0.5),
        seed=seed,
    )
    return generate_campaign(spec)


def write_truth(campaign: SyntheticCampaign, sink: TextIO) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["file_id", "label", "value"])
    for item, t in zip(campaign.matrix.items, campaign.truth):
        writer.writerow([item.file_id, item.label, int(t)])


def read_truth(source: TextIO) -> Dict[ItemId, int]:
    reader = csv.DictReader(source)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["file_id", "label", "value"]:
        raise ValueError("truth file must have header file_id,label,value")
    return {ItemId(row["file_id"].strip(), row["label"].strip()): int(row["value"]) for row in reader}
