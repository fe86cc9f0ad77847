import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annotrel.core import AnnotationMatrix, ItemId, LabelVocabulary
from annotrel.mace import (
    EmptyMatrixError,
    GroundTruthEstimate,
    MaceConfig,
    _e_step,
    em_fit,
    log_likelihood,
    model_to_dict,
    observation_likelihood,
    predict,
    threshold_at,
)
from annotrel.simulate import CampaignSpec, generate_campaign

from conftest import random_matrix


def brute_force_log_likelihood(dense, theta, xi):
    """Sum over every truth vector T in {0,1}^N of P(T) prod_ij P(A_ij | T_i)."""
    n, m = dense.shape
    total = 0.0
    for truth in itertools.product((0, 1), repeat=n):
        p = 1.0
        for i, t in enumerate(truth):
            p *= 0.5
            for j in range(m):
                a = dense[i, j]
                if a < 0:
                    continue
                p *= theta[j] * (a == t) + (1 - theta[j]) * xi[j][a]
        total += p
    return math.log(total)


def random_params(rng, m):
    theta = rng.uniform(0.0, 1.0, size=m)
    raw = rng.uniform(0.05, 1.0, size=(m, 2))
    return theta, raw / raw.sum(axis=1, keepdims=True)


class TestObservationLikelihood:
    def test_perfect_annotator(self):
        assert observation_likelihood(1.0, (0.3, 0.7), 1, 1) == 1.0
        assert observation_likelihood(1.0, (0.3, 0.7), 0, 1) == 0.0

    def test_uniform_spammer(self):
        for t in (0, 1):
            for a in (0, 1):
                assert observation_likelihood(0.0, (0.5, 0.5), a, t) == 0.5

    def test_mixture_values(self):
        assert observation_likelihood(0.8, (0.3, 0.7), 1, 1) == pytest.approx(0.94)
        assert observation_likelihood(0.8, (0.3, 0.7), 1, 0) == pytest.approx(0.14)

    def test_matches_generative_sampling(self):
        # draw S ~ Bernoulli(1 - theta); copy truth when S = 0, else sample from xi
        rng = np.random.default_rng(0)
        n = 400_000
        theta, xi = 0.8, (0.3, 0.7)
        for t in (0, 1):
            spam = rng.random(n) >= theta
            drawn = (rng.random(n) < xi[1]).astype(int)
            a = np.where(spam, drawn, t)
            p_hat = np.mean(a == 1)
            p = observation_likelihood(theta, xi, 1, t)
            assert abs(p_hat - p) < 4 * math.sqrt(p * (1 - p) / n)


class TestLogLikelihood:
    def test_empty(self):
        assert log_likelihood(AnnotationMatrix([], [], [], [], []), [], np.zeros((0, 2))) == 0.0

    @pytest.mark.parametrize("value", [0, 1])
    def test_uninformative_annotator(self, value):
        m = AnnotationMatrix.from_dense([[value]])
        assert log_likelihood(m, [0.0], [[0.5, 0.5]]) == pytest.approx(math.log(0.5))

    def test_unanswered_items_contribute_nothing(self):
        rng = np.random.default_rng(1)
        theta, xi = random_params(rng, 3)
        dense = np.array([[1, 0, -1], [0, 0, 1]])
        padded = np.vstack([dense, [[-1, -1, -1]]])
        a = log_likelihood(AnnotationMatrix.from_dense(dense), theta, xi)
        b = log_likelihood(AnnotationMatrix.from_dense(padded), theta, xi)
        assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_log_likelihood_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 11)), int(rng.integers(1, 6))
    matrix = random_matrix(rng, n_items=n, n_annotators=m, missing=0.3)
    theta, xi = random_params(rng, m)
    expected = brute_force_log_likelihood(matrix.to_dense(), theta, xi)
    assert log_likelihood(matrix, theta, xi) == pytest.approx(expected, abs=1e-9)


class TestEmFit:
    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrixError):
            em_fit(AnnotationMatrix([ItemId("f", "l")], ["a"], [], [], []))

    def test_unanimous(self):
        rng = np.random.default_rng(2)
        truth = rng.integers(0, 2, size=60)
        dense = np.repeat(truth[:, None], 4, axis=1)
        model = em_fit(AnnotationMatrix.from_dense(dense), MaceConfig(seed=3))
        assert (model.theta >= 0.9).all()
        assert np.array_equal(predict(model).decisions, truth)

    def test_invariants(self):
        matrix = random_matrix(np.random.default_rng(4), n_items=80, n_annotators=6)
        model = em_fit(matrix, MaceConfig(seed=5, restarts=3))
        assert np.allclose(model.xi.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(model.posteriors.sum(axis=1), 1.0, atol=1e-9)
        for arr in (model.theta, model.xi, model.posteriors, model.expected_spam):
            assert ((arr >= 0) & (arr <= 1)).all()
        assert model.expected_spam.shape == (matrix.num_cells,)
        assert model.log_likelihood == pytest.approx(log_likelihood(matrix, model.theta, model.xi), abs=1e-9)

    def test_unanswered_item_gets_prior(self):
        dense = np.array([[1, 1], [0, 0], [-1, -1]])
        model = em_fit(AnnotationMatrix.from_dense(dense), MaceConfig(seed=0))
        assert model.posteriors[2].tolist() == [0.5, 0.5]
        est = predict(model)
        assert est.decisions[2] == 0 and est.confidence[2] == 0.5

    def test_deterministic(self):
        matrix = random_matrix(np.random.default_rng(6), n_items=50, n_annotators=5)
        a = em_fit(matrix, MaceConfig(seed=99, restarts=4))
        b = em_fit(matrix, MaceConfig(seed=99, restarts=4))
        for field in ("theta", "xi", "posteriors", "expected_spam"):
            assert np.array_equal(getattr(a, field), getattr(b, field))
        assert a.log_likelihood == b.log_likelihood

    def test_more_restarts_never_worse(self):
        # restart k always draws from the k-th child seed, so restart 0 is shared
        matrix = random_matrix(np.random.default_rng(7), n_items=40, n_annotators=5)
        one = em_fit(matrix, MaceConfig(seed=1, restarts=1))
        many = em_fit(matrix, MaceConfig(seed=1, restarts=6))
        assert many.log_likelihood >= one.log_likelihood

    def test_respects_max_iterations(self):
        matrix = random_matrix(np.random.default_rng(8), n_items=40, n_annotators=5)
        model = em_fit(matrix, MaceConfig(seed=1, restarts=1, max_iterations=3, tolerance=1e-300))
        assert model.iterations == 3
        assert len(model.log_likelihood_trace) == 4

    @pytest.mark.parametrize("kwargs", [{"restarts": 0}, {"max_iterations": 0}, {"tolerance": 0}, {"smoothing": -1}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            MaceConfig(**kwargs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.1, 1.0]))
def test_em_objective_monotone(seed, smoothing):
    matrix = random_matrix(np.random.default_rng(seed), n_items=30, n_annotators=5)
    if matrix.num_cells == 0:
        return
    model = em_fit(matrix, MaceConfig(seed=seed, restarts=1, smoothing=smoothing))
    assert np.diff(model.objective_trace).min(initial=0.0) >= -1e-9
    if smoothing == 0:
        assert model.objective_trace == model.log_likelihood_trace


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unanimous_negative_never_positive(seed):
    rng = np.random.default_rng(seed)
    matrix = random_matrix(rng, n_items=20, n_annotators=5, missing=0.3)
    theta, xi = random_params(rng, 5)
    theta[rng.random(5) < 0.3] = 0.0  # exact ties included
    stats = _e_step(matrix, theta, xi)
    decisions = stats.posteriors[:, 1] > stats.posteriors[:, 0]
    no_positive = matrix.positives_per_item() == 0
    assert not decisions[no_positive].any()


def planted(seed, n_files=50, labels=10):
    vocab = LabelVocabulary(tuple(f"l{k}" for k in range(labels)))
    spec = CampaignSpec(
        num_files=n_files,
        vocab=vocab,
        num_annotators=20,
        files_per_annotator=1,
        competence=[0.9] * 15 + [0.1] * 5,
        spam_dist=(0.5, 0.5),
        seed=seed,
        annotators_per_file=5,
    )
    return generate_campaign(spec)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_spammers_rank_last(seed):
    campaign = planted(seed)
    model = em_fit(campaign.matrix, MaceConfig(seed=seed))
    assert model.theta[15:].max() < model.theta[:15].min()


def test_pure_spammers_below_competent_population():
    vocab = LabelVocabulary(tuple(f"l{k}" for k in range(10)))
    spec = CampaignSpec(
        num_files=200,
        vocab=vocab,
        num_annotators=30,
        files_per_annotator=1,
        competence=[0.9] * 15 + [0.0] * 15,
        spam_dist=(0.5, 0.5),
        seed=12,
        annotators_per_file=5,
    )
    campaign = generate_campaign(spec)
    model = em_fit(campaign.matrix, MaceConfig(seed=12))
    assert model.theta[15:].max() < model.theta[:15].min()


class TestPredict:
    def test_tie_and_argmax(self):
        matrix = AnnotationMatrix.from_dense([[1, 0], [1, 1]])
        model = em_fit(matrix, MaceConfig(seed=0, restarts=1))
        model.posteriors = np.array([[0.5, 0.5], [0.1, 0.9]])
        est = predict(model)
        assert est.decisions.tolist() == [0, 1]
        assert est.confidence.tolist() == [0.5, 0.9]
        assert est.kept.all()


class TestThreshold:
    def _est(self, conf):
        conf = np.asarray(conf, dtype=float)
        n = len(conf)
        return GroundTruthEstimate(
            items=tuple(ItemId(f"f{i}", "l") for i in range(n)),
            decisions=np.ones(n, dtype=np.int8),
            confidence=conf,
            kept=np.ones(n, dtype=bool),
        )

    def test_identity_at_100(self):
        est = threshold_at(self._est([0.6, 0.9, 0.7]), 100)
        assert est.kept.all()

    def test_ninety_of_ten(self):
        conf = [0.9, 0.8, 0.99, 0.55, 0.7, 0.6, 0.95, 0.85, 0.75, 0.65]
        est = threshold_at(self._est(conf), 90)
        assert est.kept.sum() == 9
        assert conf[int(np.flatnonzero(~est.kept)[0])] == min(conf)

    def test_ties_favor_earlier_items(self):
        est = threshold_at(self._est([0.7, 0.7, 0.7, 0.7]), 50)
        assert est.kept.tolist() == [True, True, False, False]

    def test_ceiling(self):
        assert threshold_at(self._est([0.6] * 7), 50).kept.sum() == 4

    @pytest.mark.parametrize("p", [0, -5, 100.5])
    def test_range(self, p):
        with pytest.raises(ValueError):
            threshold_at(self._est([0.6]), p)

    def test_nested(self):
        rng = np.random.default_rng(0)
        est = self._est(rng.uniform(0.5, 1, size=50))
        est.decisions = rng.integers(0, 2, size=50).astype(np.int8)
        prev = est.positives()
        for p in (90, 70, 40, 10):
            cur = threshold_at(est, p).positives()
            assert not (cur & ~prev).any()
            prev = cur


def test_model_json_shape():
    matrix = AnnotationMatrix.from_dense([[1, 0], [1, 1], [0, -1]])
    model = em_fit(matrix, MaceConfig(seed=3, restarts=2))
    data = model_to_dict(model)
    assert data["run"]["seed"] == 3 and data["run"]["restarts"] == 2
    assert [a["id"] for a in data["annotators"]] == list(matrix.annotators)
    assert len(data["items"]) == 3
    assert set(data["items"][0]) == {"file", "label", "posterior", "decision", "confidence", "kept"}


def test_graded_competence_rank_recovery():
    from scipy.stats import spearmanr

    vocab = LabelVocabulary(tuple(f"l{k}" for k in range(10)))
    competence = np.linspace(0.1, 0.95, 20)
    spec = CampaignSpec(
        num_files=100,
        vocab=vocab,
        num_annotators=20,
        files_per_annotator=1,
        competence=competence,
        spam_dist=(0.5, 0.5),
        seed=8,
        annotators_per_file=5,
    )
    model = em_fit(generate_campaign(spec).matrix, MaceConfig(seed=8))
    assert spearmanr(competence, model.theta).correlation >= 0.8
