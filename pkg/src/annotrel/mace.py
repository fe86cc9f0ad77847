"""Multi-annotator competence estimation (MACE) for binary items.

Each annotator j either copies the true label (probability ``theta[j]``) or
spams, drawing the label from a personal distribution ``xi[j]``. Parameters
are fitted by EM with several random restarts; the truth prior is uniform.

The M-step adds ``smoothing`` pseudo-counts, which makes each run a MAP
estimate: EM is then monotone in ``log_likelihood + log_prior`` rather than
in the log-likelihood alone. Both traces are recorded on the model.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, TextIO, Tuple

import numpy as np

from .core import AnnotationMatrix, ItemId

LOG_HALF = math.log(0.5)


class EmptyMatrixError(ValueError):
    """EM was asked to fit a matrix without a single stored cell."""


@dataclass(frozen=True)
class MaceConfig:
    restarts: int = 10
    max_iterations: int = 50
    tolerance: float = 1e-6
    smoothing: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")


@dataclass
class GroundTruthEstimate:
    """Per-item binary decisions with a confidence and a kept flag."""

    items: Tuple[ItemId, ...]
    decisions: np.ndarray
    confidence: np.ndarray
    kept: np.ndarray
    method: str = "mace"

    def positives(self) -> np.ndarray:
        """Boolean mask of items decided 1 and kept."""
        return (self.decisions == 1) & self.kept


@dataclass
class MaceModel:
    items: Tuple[ItemId, ...]
    annotators: Tuple[str, ...]
    theta: np.ndarray
    xi: np.ndarray
    posteriors: np.ndarray
    expected_spam: np.ndarray
    log_likelihood: float
    objective: float
    iterations: int
    restart: int
    config: MaceConfig
    log_likelihood_trace: List[float] = field(default_factory=list)
    objective_trace: List[float] = field(default_factory=list)

    def competence(self) -> Dict[str, float]:
        return {a: float(t) for a, t in zip(self.annotators, self.theta)}


def observation_likelihood(theta_j: float, xi_j: Sequence[float], a: int, t: int) -> float:
    """P(A = a | T = t) with the spam indicator marginalized out."""
    return theta_j * (a == t) + (1.0 - theta_j) * xi_j[a]


def _cell_log_likelihoods(matrix: AnnotationMatrix, theta: np.ndarray, xi: np.ndarray):
    """Per-cell spam mass and log P(A_ij | T_i = t) for t = 0, 1."""
    a = matrix.values.astype(np.int64)
    th = theta[matrix.cols]
    spam = (1.0 - th) * xi[matrix.cols, a]
    with np.errstate(divide="ignore"):
        log_lik = np.stack([np.log(th * (a == 0) + spam), np.log(th * (a == 1) + spam)], axis=1)
    return spam, log_lik


def _log_joint(matrix: AnnotationMatrix, log_lik: np.ndarray) -> np.ndarray:
    n = len(matrix.items)
    joint = np.empty((n, 2))
    for t in (0, 1):
        joint[:, t] = LOG_HALF + np.bincount(matrix.rows, weights=log_lik[:, t], minlength=n)
    return joint


def log_likelihood(matrix: AnnotationMatrix, theta, xi) -> float:
    """log P(A; theta, xi), summing the truth out of every item in log space."""
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if matrix.num_cells == 0:
        return 0.0
    _, log_lik = _cell_log_likelihoods(matrix, theta, xi)
    joint = _log_joint(matrix, log_lik)
    return float(np.sum(np.logaddexp(joint[:, 0], joint[:, 1])))


def log_prior(theta: np.ndarray, xi: np.ndarray, smoothing: float) -> float:
    """Log density (up to a constant) of the Beta/Dirichlet prior implied by smoothing."""
    if smoothing == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        return float(smoothing * (np.sum(np.log(theta)) + np.sum(np.log1p(-theta)) + np.sum(np.log(xi))))


class _EStep(NamedTuple):
    posteriors: np.ndarray
    expected_spam: np.ndarray
    log_likelihood: float


def _e_step(matrix: AnnotationMatrix, theta: np.ndarray, xi: np.ndarray) -> _EStep:
    spam, log_lik = _cell_log_likelihoods(matrix, theta, xi)
    joint = _log_joint(matrix, log_lik)
    norm = np.logaddexp(joint[:, 0], joint[:, 1])
    posteriors = np.exp(joint - norm[:, None])

    # P(S_ij = 1 | A, T_i = t) = spam / (theta [a = t] + spam); 0/0 only when spam = 0
    w = posteriors[matrix.rows]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(spam[:, None] > 0, spam[:, None] / np.exp(log_lik), 0.0)
    expected_spam = np.clip(np.sum(w * ratio, axis=1), 0.0, 1.0)
    return _EStep(posteriors, expected_spam, float(np.sum(norm)))


def _m_step(matrix: AnnotationMatrix, expected_spam: np.ndarray, smoothing: float):
    m = len(matrix.annotators)
    responses = np.bincount(matrix.cols, minlength=m).astype(float)
    spam_total = np.bincount(matrix.cols, weights=expected_spam, minlength=m)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = 1.0 - (spam_total + smoothing) / (responses + 2.0 * smoothing)
    counts = np.empty((m, 2))
    for a in (0, 1):
        counts[:, a] = np.bincount(matrix.cols, weights=expected_spam * (matrix.values == a), minlength=m) + smoothing
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = counts / totals
    # annotators with no responses (or nothing to learn from at zero smoothing) stay neutral
    theta = np.where(np.isfinite(theta), np.clip(theta, 0.0, 1.0), 0.5)
    xi = np.where(np.isfinite(xi).all(axis=1, keepdims=True) & (totals > 0), xi, 0.5)
    return theta, xi


def _initial_parameters(rng: np.random.Generator, m: int):
    theta = rng.uniform(0.4, 0.9, size=m)
    raw = rng.uniform(0.5, 1.5, size=(m, 2))
    return theta, raw / raw.sum(axis=1, keepdims=True)


def _run(matrix: AnnotationMatrix, config: MaceConfig, rng: np.random.Generator, restart: int) -> MaceModel:
    theta, xi = _initial_parameters(rng, len(matrix.annotators))
    stats = _e_step(matrix, theta, xi)
    ll_trace = [stats.log_likelihood]
    obj_trace = [stats.log_likelihood + log_prior(theta, xi, config.smoothing)]
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        theta, xi = _m_step(matrix, stats.expected_spam, config.smoothing)
        stats = _e_step(matrix, theta, xi)
        ll_trace.append(stats.log_likelihood)
        obj_trace.append(stats.log_likelihood + log_prior(theta, xi, config.smoothing))
        previous, current = obj_trace[-2], obj_trace[-1]
        if current - previous < config.tolerance * abs(previous):
            break
    return MaceModel(
        items=matrix.items,
        annotators=matrix.annotators,
        theta=theta,
        xi=xi,
        posteriors=stats.posteriors,
        expected_spam=stats.expected_spam,
        log_likelihood=ll_trace[-1],
        objective=obj_trace[-1],
        iterations=iterations,
        restart=restart,
        config=config,
        log_likelihood_trace=ll_trace,
        objective_trace=obj_trace,
    )


def em_fit(matrix: AnnotationMatrix, config: Optional[MaceConfig] = None) -> MaceModel:
    """Fit MACE by EM; the restart with the highest final log-likelihood wins.

    Restart k draws its initialization from the k-th child of
    ``SeedSequence(config.seed)``, so results do not depend on run order.
    """
    config = config or MaceConfig()
    if matrix.num_cells == 0:
        raise EmptyMatrixError("cannot fit MACE on a matrix with no annotations")
    children = np.random.SeedSequence(config.seed).spawn(config.restarts)
    best = None
    for k, child in enumerate(children):
        model = _run(matrix, config, np.random.default_rng(child), k)
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    return best


def predict(model: MaceModel) -> GroundTruthEstimate:
    post = model.posteriors
    decisions = (post[:, 1] > post[:, 0]).astype(np.int8)
    return GroundTruthEstimate(
        items=model.items,
        decisions=decisions,
        confidence=post.max(axis=1),
        kept=np.ones(len(model.items), dtype=bool),
        method="mace",
    )


def threshold_at(estimate: GroundTruthEstimate, keep_percent: float) -> GroundTruthEstimate:
    """Keep the ceil(keep_percent% * N) most confident items (earlier item wins ties)."""
    if not 0 < keep_percent <= 100:
        raise ValueError("keep_percent must be in (0, 100]")
    n = len(estimate.items)
    n_keep = min(n, math.ceil(keep_percent * n / 100.0))
    order = np.argsort(-estimate.confidence, kind="stable")
    kept = np.zeros(n, dtype=bool)
    kept[order[:n_keep]] = True
    return GroundTruthEstimate(
        items=estimate.items,
        decisions=estimate.decisions.copy(),
        confidence=estimate.confidence.copy(),
        kept=kept,
        method=f"{estimate.method}@{keep_percent:g}",
    )


def model_to_dict(model: MaceModel, estimate: Optional[GroundTruthEstimate] = None) -> dict:
    estimate = estimate or predict(model)
    return {
        "run": {
            "seed": model.config.seed,
            "restarts": model.config.restarts,
            "max_iterations": model.config.max_iterations,
            "tolerance": model.config.tolerance,
            "smoothing": model.config.smoothing,
            "best_restart": model.restart,
            "iterations": model.iterations,
            "log_likelihood": model.log_likelihood,
            "objective": model.objective,
        },
        "annotators": [
            {"id": a, "theta": float(t), "xi": [float(x) for x in xi]}
            for a, t, xi in zip(model.annotators, model.theta, model.xi)
        ],
        "items": [
            {
                "file": item.file_id,
                "label": item.label,
                "posterior": [float(p) for p in post],
                "decision": int(d),
                "confidence": float(c),
                "kept": bool(k),
            }
            for item, post, d, c, k in zip(
                model.items, model.posteriors, estimate.decisions, estimate.confidence, estimate.kept
            )
        ],
    }


def write_competence(competence: Dict[str, float], sink: TextIO) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["annotator_id", "theta"])
    for annotator, theta in competence.items():
        writer.writerow([annotator, repr(float(theta))])


def read_competence(source: TextIO) -> Dict[str, float]:
    reader = csv.DictReader(source)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["annotator_id", "theta"]:
        raise ValueError("competence file must have header annotator_id,theta")
    competence = {}
    for row in reader:
        annotator = row["annotator_id"].strip()
        if annotator in competence:
            raise ValueError(f"duplicate competence for {annotator!r}")
        competence[annotator] = float(row["theta"])
    return competence
