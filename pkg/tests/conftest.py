import numpy as np
import pytest

from annotrel.core import AnnotationMatrix, ItemId, LabelVocabulary
from annotrel.simulate import DEFAULT_LABELS

LABELS = LabelVocabulary(DEFAULT_LABELS)


def random_matrix(rng, n_items=None, n_annotators=None, missing=0.4, labels=None):
    """Dense random 0/1 matrix with a fraction of cells blanked out."""
    n = n_items if n_items is not None else int(rng.integers(1, 40))
    m = n_annotators if n_annotators is not None else int(rng.integers(1, 8))
    dense = rng.integers(0, 2, size=(n, m)).astype(float)
    dense[rng.random((n, m)) < missing] = -1
    items = None
    if labels is not None:
        items = [ItemId(f"f{i // len(labels):03d}", labels[i % len(labels)]) for i in range(n)]
    return AnnotationMatrix.from_dense(dense, items=items)


def grid_matrix(rng, n_files, labels, n_annotators, missing=0.3, p_one=0.5):
    """Full file x label grid; each annotator either sees a whole file or none of it."""
    items = [ItemId(f"f{f:03d}", label) for f in range(n_files) for label in labels]
    sees = rng.random((n_files, n_annotators)) >= missing
    dense = (rng.random((len(items), n_annotators)) < p_one).astype(float)
    dense[~np.repeat(sees, len(labels), axis=0)] = -1
    return AnnotationMatrix.from_dense(dense, items=items)


@pytest.fixture
def vocab():
    return LABELS


_criteria = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.outcome != "passed":
        _criteria[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        status = "PASS" if _criteria[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
