"""Campaign records and binary (file, label) annotation matrices.

A campaign is a list of per-(file, annotator) label selections. Expanding it
yields one binary item per (file, label) pair: a selected label is an explicit
1, an unselected label on an annotated file is an implicit 0, and a file the
annotator never saw is missing.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, TextIO, Tuple

import numpy as np

CAMPAIGN_HEADER = ("file_id", "annotator_id", "labels")
LONG_HEADER = ("file_id", "label", "annotator_id", "value")


class AnnotationFormatError(ValueError):
    """Raised for malformed or inconsistent annotation input."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LabelVocabulary:
    labels: Tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        for name in labels:
            if not isinstance(name, str) or not name:
                raise ValueError(f"label names must be non-empty strings, got {name!r}")
        if len(set(labels)) != len(labels):
            raise ValueError("label names must be unique")
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, name) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown label {name!r}") from None


@dataclass(frozen=True)
class CampaignRecord:
    file_id: str
    annotator_id: str
    selected: FrozenSet[str] = field(default_factory=frozenset)


class ItemId(NamedTuple):
    file_id: str
    label: str


def read_vocabulary(source: TextIO) -> LabelVocabulary:
    """One label per line; blank lines are skipped."""
    return LabelVocabulary(tuple(line.strip() for line in source if line.strip()))


class AnnotationMatrix:
    """Sparse items x annotators table of binary responses.

    Cells are kept in coordinate form (``rows``, ``cols``, ``values``) sorted by
    (row, col); any (row, col) pair not stored is missing. Instances are
    treated as immutable: the arrays are flagged read-only.
    """

    def __init__(
        self,
        items: Sequence[ItemId],
        annotators: Sequence[str],
        rows,
        cols,
        values,
    ):
        self.items: Tuple[ItemId, ...] = tuple(ItemId(*item) for item in items)
        self.annotators: Tuple[str, ...] = tuple(annotators)
        if len(set(self.items)) != len(self.items):
            raise ValueError("duplicate item ids")
        if len(set(self.annotators)) != len(self.annotators):
            raise ValueError("duplicate annotator ids")

        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        values = np.asarray(values).reshape(-1)
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if values.size and not np.isin(values, (0, 1)).all():
            raise ValueError("cell values must be 0 or 1")
        n, m = len(self.items), len(self.annotators)
        if rows.size:
            if rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m:
                raise ValueError("cell coordinates out of range")

        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order].astype(np.int8)
        if rows.size > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise ValueError(
                    f"duplicate cell for item {self.items[rows[k]]} / annotator {self.annotators[cols[k]]}"
                )
        for arr in (rows, cols, values):
            arr.flags.writeable = False
        self.rows, self.cols, self.values = rows, cols, values

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.items), len(self.annotators)

    @property
    def num_cells(self) -> int:
        return int(self.values.size)

    def responses_per_item(self) -> np.ndarray:
        """m_u for every item."""
        return np.bincount(self.rows, minlength=len(self.items))

    def positives_per_item(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.values, minlength=len(self.items)).astype(np.int64)

    def responses_per_annotator(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=len(self.annotators))

    def value(self, item: int, annotator: int) -> Optional[int]:
        """Stored value at (item, annotator), or None if missing."""
        lo = np.searchsorted(self.rows, item, side="left")
        hi = np.searchsorted(self.rows, item, side="right")
        k = lo + np.searchsorted(self.cols[lo:hi], annotator)
        if k < hi and self.cols[k] == annotator:
            return int(self.values[k])
        return None

    def cells(self) -> Dict[Tuple[ItemId, str], int]:
        return {
            (self.items[r], self.annotators[c]): int(v)
            for r, c, v in zip(self.rows, self.cols, self.values)
        }

    def to_dense(self, missing: int = -1) -> np.ndarray:
        dense = np.full(self.shape, missing, dtype=np.int8)
        dense[self.rows, self.cols] = self.values
        return dense

    @classmethod
    def from_dense(cls, dense, items=None, annotators=None, missing: int = -1) -> "AnnotationMatrix":
        """Build from a 2-d array where ``missing`` (or NaN) marks absent cells."""
        dense = np.asarray(dense, dtype=float)
        if dense.ndim != 2:
            raise ValueError("dense matrix must be 2-d")
        n, m = dense.shape
        if items is None:
            items = [ItemId(f"item{i:04d}", "label") for i in range(n)]
        if annotators is None:
            annotators = [f"ann{j:03d}" for j in range(m)]
        present = ~np.isnan(dense) & (dense != missing)
        rows, cols = np.nonzero(present)
        return cls(items, annotators, rows, cols, dense[rows, cols].astype(np.int8))

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotationMatrix):
            return NotImplemented
        return (
            self.items == other.items
            and self.annotators == other.annotators
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        n, m = self.shape
        return f"AnnotationMatrix(items={n}, annotators={m}, cells={self.num_cells})"


def parse_campaign(source: TextIO, vocab: LabelVocabulary) -> List[CampaignRecord]:
    """Read campaign CSV (``file_id,annotator_id,labels``; labels ``;``-separated)."""
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise AnnotationFormatError("empty campaign file", line=1) from None
    if tuple(h.strip() for h in header) != CAMPAIGN_HEADER:
        raise AnnotationFormatError(f"expected header {','.join(CAMPAIGN_HEADER)}", line=1)

    records = []
    seen = set()
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise AnnotationFormatError(f"expected 3 fields, got {len(row)}", line=line)
        file_id, annotator_id, labels = (x.strip() for x in row)
        if not file_id or not annotator_id:
            raise AnnotationFormatError("empty file_id or annotator_id", line=line)
        selected = [x.strip() for x in labels.split(";") if x.strip()] if labels else []
        for name in selected:
            if name not in vocab:
                raise AnnotationFormatError(f"unknown label {name!r}", line=line)
        key = (file_id, annotator_id)
        if key in seen:
            raise AnnotationFormatError(f"duplicate record for file {file_id!r}, annotator {annotator_id!r}", line=line)
        seen.add(key)
        records.append(CampaignRecord(file_id, annotator_id, frozenset(selected)))
    return records


def _item_grid(files: Iterable[str], vocab: LabelVocabulary) -> List[ItemId]:
    return [ItemId(f, label) for f in sorted(set(files)) for label in vocab.labels]


def expand_to_items(records: Sequence[CampaignRecord], vocab: LabelVocabulary) -> AnnotationMatrix:
    """Binarize multi-label records into one item per (file, label)."""
    items = _item_grid((r.file_id for r in records), vocab)
    annotators = sorted({r.annotator_id for r in records})
    file_row = {item.file_id: i for i, item in reversed(list(enumerate(items)))}
    ann_col = {a: j for j, a in enumerate(annotators)}

    seen = set()
    rows, cols, values = [], [], []
    for rec in records:
        key = (rec.file_id, rec.annotator_id)
        if key in seen:
            raise AnnotationFormatError(f"duplicate record for file {rec.file_id!r}, annotator {rec.annotator_id!r}")
        seen.add(key)
        unknown = rec.selected.difference(vocab.labels)
        if unknown:
            raise AnnotationFormatError(f"unknown label {sorted(unknown)[0]!r}")
        base = file_row[rec.file_id]
        col = ann_col[rec.annotator_id]
        for k, label in enumerate(vocab.labels):
            rows.append(base + k)
            cols.append(col)
            values.append(1 if label in rec.selected else 0)
    return AnnotationMatrix(items, annotators, rows, cols, values)


def collapse_to_records(matrix: AnnotationMatrix) -> List[CampaignRecord]:
    """Inverse of :func:`expand_to_items`: one record per (file, annotator) with any stored cell."""
    selected: Dict[Tuple[str, str], set] = {}
    for r, c, v in zip(matrix.rows, matrix.cols, matrix.values):
        item = matrix.items[r]
        bucket = selected.setdefault((item.file_id, matrix.annotators[c]), set())
        if v:
            bucket.add(item.label)
    return [CampaignRecord(f, a, frozenset(s)) for (f, a), s in sorted(selected.items())]


def filter_annotators(matrix: AnnotationMatrix, keep: Iterable[str]) -> AnnotationMatrix:
    """Drop every annotator column not in ``keep``; rows are retained."""
    keep = set(keep)
    unknown = keep.difference(matrix.annotators)
    if unknown:
        raise KeyError(f"unknown annotator ids: {sorted(unknown)}")
    kept_cols = [j for j, a in enumerate(matrix.annotators) if a in keep]
    remap = np.full(len(matrix.annotators), -1, dtype=np.int64)
    remap[kept_cols] = np.arange(len(kept_cols))
    mask = remap[matrix.cols] >= 0
    return AnnotationMatrix(
        matrix.items,
        [matrix.annotators[j] for j in kept_cols],
        matrix.rows[mask],
        remap[matrix.cols[mask]],
        matrix.values[mask],
    )


def subset_by_label(matrix: AnnotationMatrix, label: str, vocab: Optional[LabelVocabulary] = None) -> AnnotationMatrix:
    """Keep only the items carrying ``label``; annotator columns are unchanged."""
    if vocab is not None and label not in vocab:
        raise KeyError(f"unknown label {label!r}")
    if vocab is None and label not in {item.label for item in matrix.items}:
        raise KeyError(f"unknown label {label!r}")
    return subset_items(matrix, [i for i, item in enumerate(matrix.items) if item.label == label])


def subset_items(matrix: AnnotationMatrix, indices: Sequence[int]) -> AnnotationMatrix:
    indices = np.asarray(indices, dtype=np.int64)
    remap = np.full(len(matrix.items), -1, dtype=np.int64)
    remap[indices] = np.arange(indices.size)
    mask = remap[matrix.rows] >= 0
    return AnnotationMatrix(
        [matrix.items[i] for i in indices],
        matrix.annotators,
        remap[matrix.rows[mask]],
        matrix.cols[mask],
        matrix.values[mask],
    )


def read_long_matrix(source: TextIO, vocab: Optional[LabelVocabulary] = None) -> Tuple[AnnotationMatrix, LabelVocabulary]:
    """Read the long item-matrix CSV (``file_id,label,annotator_id,value``).

    Every file seen gets the full label grid, so items whose cells were all
    filtered away come back as empty rows. Without ``vocab``, labels are
    ordered by first appearance.
    """
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise AnnotationFormatError("empty matrix file", line=1) from None
    if tuple(h.strip() for h in header) != LONG_HEADER:
        raise AnnotationFormatError(f"expected header {','.join(LONG_HEADER)}", line=1)

    triples = []
    label_order: Dict[str, None] = {}
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise AnnotationFormatError(f"expected 4 fields, got {len(row)}", line=line)
        file_id, label, annotator_id, value = (x.strip() for x in row)
        if value not in ("0", "1"):
            raise AnnotationFormatError(f"value must be 0 or 1, got {value!r}", line=line)
        if vocab is not None and label not in vocab:
            raise AnnotationFormatError(f"unknown label {label!r}", line=line)
        if not file_id or not annotator_id:
            raise AnnotationFormatError("empty file_id or annotator_id", line=line)
        label_order.setdefault(label, None)
        triples.append((file_id, label, annotator_id, int(value), line))

    if vocab is None:
        vocab = LabelVocabulary(tuple(label_order))
    items = _item_grid((t[0] for t in triples), vocab)
    item_row = {item: i for i, item in enumerate(items)}
    annotators = sorted({t[2] for t in triples})
    ann_col = {a: j for j, a in enumerate(annotators)}
    seen = set()
    rows, cols, values = [], [], []
    for file_id, label, annotator_id, value, line in triples:
        r, c = item_row[ItemId(file_id, label)], ann_col[annotator_id]
        if (r, c) in seen:
            raise AnnotationFormatError("duplicate (file_id, label, annotator_id) triple", line=line)
        seen.add((r, c))
        rows.append(r)
        cols.append(c)
        values.append(value)
    return AnnotationMatrix(items, annotators, rows, cols, values), vocab


def write_long_matrix(matrix: AnnotationMatrix, sink: TextIO) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(LONG_HEADER)
    for r, c, v in zip(matrix.rows, matrix.cols, matrix.values):
        item = matrix.items[r]
        writer.writerow((item.file_id, item.label, matrix.annotators[c], int(v)))


def read_matrix(source: TextIO, vocab: Optional[LabelVocabulary] = None) -> Tuple[AnnotationMatrix, LabelVocabulary]:
    """Read either input format, dispatching on the header line.

    The campaign format needs ``vocab``; the long format infers it if absent.
    """
    text = source.read()
    first = text.split("\n", 1)[0].strip()
    fields = tuple(h.strip() for h in first.split(","))
    if fields == CAMPAIGN_HEADER:
        if vocab is None:
            raise AnnotationFormatError("campaign format requires a label vocabulary")
        return expand_to_items(parse_campaign(io.StringIO(text), vocab), vocab), vocab
    if fields == LONG_HEADER:
        return read_long_matrix(io.StringIO(text), vocab)
    raise AnnotationFormatError(
        f"unrecognized header; expected {','.join(CAMPAIGN_HEADER)} or {','.join(LONG_HEADER)}", line=1
    )
