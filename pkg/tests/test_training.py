import math

import numpy as np
import pytest

from hiersg.commonsense import AlignmentSets
from hiersg.core_model import Triplet
from hiersg.error_handler import MissingFlatHead, ShapeMismatch, TargetCategoryMismatch
from hiersg.relhead import ComposedDistribution, HeadParameters
from hiersg.synthetic import make_toy_samples, toy_hierarchy
from hiersg.training import (
    GradientSet,
    LossWeights,
    TrainingSample,
    candidate_penalties,
    finite_difference_gradients,
    joint_accuracy,
    loss_contrastive,
    loss_distill,
    loss_super,
    loss_sub,
    max_relative_error,
    sgd_step,
    total_loss_and_grads,
    train,
)
from tests.helpers import make_graph


def uniform_distribution():
    return ComposedDistribution(r_sc=np.full(4, 0.25), joint=tuple(np.full(2, 0.125) for _ in range(3)))


def naive_contrastive(batch, temperature, normalize=False):
    """Anchor by anchor: mean over positives of -log(exp(s_ap) / sum over negatives of exp(s_an))."""
    vectors = [np.asarray(x, dtype=float) for x, _ in batch]
    if normalize:
        vectors = [v / np.linalg.norm(v) for v in vectors]
    labels = [label for _, label in batch]
    total, anchors = 0.0, 0
    for a in range(len(batch)):
        positives = [p for p in range(len(batch)) if p != a and labels[p] == labels[a]]
        negatives = [n for n in range(len(batch)) if labels[n] != labels[a]]
        if not positives:
            continue
        anchors += 1
        if not negatives:
            continue
        denominator = 0.0
        for n in negatives:
            denominator += math.exp(float(vectors[a] @ vectors[n]) / temperature)
        term = 0.0
        for p in positives:
            term -= math.log(math.exp(float(vectors[a] @ vectors[p]) / temperature) / denominator)
        total += term / len(positives)
    return total / anchors if anchors else 0.0


def gradient_draw(h, seed, weights, with_flat=False, input_scale=1.0):
    rng = np.random.default_rng(seed)
    relations = [0, 0, 2, 2, 3, 5, 5, None]
    samples = [TrainingSample.for_relation(input_scale * rng.normal(size=6), r, h) for r in relations]
    p = HeadParameters.init(6, 4, h, seed=seed, with_flat=with_flat, init_scale=0.5)
    p = p.replace_arrays({'b_proj': rng.normal(size=4)})
    return samples, p


class TestComponentLosses:
    def test_super_loss_of_uniform_categories(self):
        assert loss_super(uniform_distribution(), 0) == pytest.approx(math.log(4))

    def test_sub_loss_of_uniform_relations(self, toy_h):
        assert loss_sub(uniform_distribution(), 1, 3, toy_h) == pytest.approx(-math.log(0.125))

    def test_sub_loss_is_zero_for_background(self, toy_h):
        assert loss_sub(uniform_distribution(), toy_h.background_index, None, toy_h) == 0.0

    def test_sub_loss_rejects_wrong_category(self, toy_h):
        with pytest.raises(TargetCategoryMismatch):
            loss_sub(uniform_distribution(), 0, 4, toy_h)

    def test_super_loss_is_clamped(self):
        cd = ComposedDistribution(r_sc=np.array([1.0, 0.0]), joint=(np.array([1.0]),))
        assert loss_super(cd, 1) == pytest.approx(-math.log(1e-12))

    def test_contrastive_known_value(self):
        e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert loss_contrastive([(e1, 0), (e1, 0), (e2, 1)], temperature=1.0) == pytest.approx(-1.0)

    def test_contrastive_without_positives_is_zero(self):
        batch = [(np.array([1.0, 2.0]), 0), (np.array([0.5, 0.1]), 1)]
        assert loss_contrastive(batch) == 0.0

    def test_contrastive_needs_two_samples(self):
        with pytest.raises(ValueError):
            loss_contrastive([(np.ones(2), 0)])

    def test_contrastive_normalization_ignores_scale(self):
        rng = np.random.default_rng(0)
        batch = [(rng.normal(size=3), label) for label in (0, 0, 1, 1, 2)]
        scaled = [(5.0 * x, label) for x, label in batch]
        assert loss_contrastive(batch, normalize=True) == pytest.approx(loss_contrastive(scaled, normalize=True))

    @pytest.mark.parametrize('normalize', [False, True])
    def test_contrastive_matches_double_loop(self, normalize):
        rng = np.random.default_rng(11)
        for _ in range(10):
            batch = [(0.5 * rng.normal(size=4), label) for label in (0, 0, 0, 1, 1, 1)]
            expected = naive_contrastive(batch, 0.1, normalize)
            assert loss_contrastive(batch, temperature=0.1, normalize=normalize) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize('normalize', [False, True])
    def test_contrastive_ignores_batch_order(self, normalize):
        rng = np.random.default_rng(12)
        batch = [(rng.normal(size=3), label) for label in (0, 0, 1, 1, 1, 2, 2, 3)]
        reference = loss_contrastive(batch, temperature=0.5, normalize=normalize)
        for _ in range(5):
            shuffled = [batch[i] for i in rng.permutation(len(batch))]
            assert loss_contrastive(shuffled, temperature=0.5, normalize=normalize) == pytest.approx(reference, rel=1e-12)


class TestDistillation:
    def test_penalties(self):
        sets = AlignmentSets()
        sets.record(Triplet(0, 1, 2), True)
        sets.record(Triplet(0, 2, 2), False)
        assert loss_distill(Triplet(0, 1, 2), sets) == 0.0
        assert loss_distill(Triplet(1, 1, 2), sets) == pytest.approx(0.1)
        assert loss_distill(Triplet(0, 2, 2), sets) == pytest.approx(10.1)

    def test_custom_lambdas(self):
        sets = AlignmentSets()
        sets.record(Triplet(0, 0, 0), False)
        assert loss_distill(Triplet(0, 0, 0), sets, lambda_weak=1.0, lambda_strong=2.0) == 3.0

    def test_candidate_penalties_follow_candidate_order(self):
        sets = AlignmentSets()
        sets.record(Triplet(0, 1, 1), True)
        sets.record(Triplet(1, 3, 0), False)
        graph = make_graph('img', [0, 1], candidates=[(0, 1, 1, 0, 0.9), (1, 0, 3, 1, 0.5), (0, 1, 4, 2, 0.2)])
        assert candidate_penalties(graph, sets) == pytest.approx([0.0, 10.1, 0.1])


class TestGradients:
    def test_analytic_matches_finite_differences_normalized(self, toy_h):
        weights = LossWeights(temperature=1.0)
        for seed in range(20):
            samples, p = gradient_draw(toy_h, seed, weights)
            _, analytic = total_loss_and_grads(samples, p, toy_h, weights)
            numeric = finite_difference_gradients(
                lambda q: total_loss_and_grads(samples, q, toy_h, weights)[0], p)
            assert analytic.is_finite()
            assert max_relative_error(analytic, numeric) <= 1e-4, f"draw {seed}"

    def test_analytic_matches_finite_differences_raw_with_flat_head(self, toy_h):
        weights = LossWeights(temperature=1.0, normalize_contrastive=False, w_flat=0.5)
        for seed in range(5):
            samples, p = gradient_draw(toy_h, seed, weights, with_flat=True, input_scale=0.5)
            _, analytic = total_loss_and_grads(samples, p, toy_h, weights)
            numeric = finite_difference_gradients(
                lambda q: total_loss_and_grads(samples, q, toy_h, weights)[0], p)
            assert max_relative_error(analytic, numeric) <= 1e-4, f"draw {seed}"

    def test_gradient_names_match_parameters(self, toy_h):
        samples, p = gradient_draw(toy_h, 0, LossWeights())
        _, grads = total_loss_and_grads(samples, p, toy_h, LossWeights())
        assert grads.names() == list(p.named_arrays())
        for name, array in p.named_arrays().items():
            assert grads[name].shape == array.shape

    def test_flat_weight_needs_flat_head(self, toy_h):
        samples, p = gradient_draw(toy_h, 0, LossWeights())
        with pytest.raises(MissingFlatHead):
            total_loss_and_grads(samples, p, toy_h, LossWeights(w_flat=1.0))

    def test_mismatched_target_rejected(self, toy_h):
        _, p = gradient_draw(toy_h, 0, LossWeights())
        bad = [TrainingSample(np.zeros(6), 0, 3), TrainingSample(np.zeros(6), 1, 2)]
        with pytest.raises(TargetCategoryMismatch):
            total_loss_and_grads(bad, p, toy_h, LossWeights())

    def test_empty_batch(self, toy_h):
        _, p = gradient_draw(toy_h, 0, LossWeights())
        with pytest.raises(ValueError):
            total_loss_and_grads([], p, toy_h, LossWeights())

    def test_finite_difference_of_a_square(self, toy_h):
        p = HeadParameters.init(2, 2, toy_h).replace_arrays({'b_sc': np.array([3.0, 0.0, 0.0, 0.0])})
        grads = finite_difference_gradients(lambda q: float(q.b_sc[0]) ** 2, p, eps=1e-4)
        assert grads['b_sc'][0] == pytest.approx(6.0, abs=1e-6)
        for name in grads.names():
            rest = grads[name][1:] if name == 'b_sc' else grads[name]
            assert np.all(rest == 0.0)

    def test_finite_difference_eps_must_be_positive(self, toy_h):
        _, p = gradient_draw(toy_h, 0, LossWeights())
        with pytest.raises(ValueError):
            finite_difference_gradients(lambda q: 0.0, p, eps=0.0)

    def test_relative_error_floor(self):
        a = GradientSet({'w': np.array([0.0, 1.0])})
        b = GradientSet({'w': np.array([1e-6, 1.0])})
        assert max_relative_error(a, b) == pytest.approx(1e-3)


class TestSgd:
    def test_step_moves_against_gradient(self, toy_h):
        samples, p = gradient_draw(toy_h, 1, LossWeights())
        _, grads = total_loss_and_grads(samples, p, toy_h, LossWeights())
        q = sgd_step(p, grads, lr=0.5)
        for name, theta in p.named_arrays().items():
            assert np.allclose(q.named_arrays()[name], theta - 0.5 * grads[name])

    def test_shape_mismatch(self, toy_h):
        _, p = gradient_draw(toy_h, 1, LossWeights())
        grads = {name: np.zeros_like(a) for name, a in p.named_arrays().items()}
        grads['b_sc'] = np.zeros(2)
        with pytest.raises(ShapeMismatch):
            sgd_step(p, GradientSet(grads), lr=0.1)

    def test_missing_gradient(self, toy_h):
        _, p = gradient_draw(toy_h, 1, LossWeights())
        grads = {name: np.zeros_like(a) for name, a in p.named_arrays().items() if name != 'W_sem'}
        with pytest.raises(ShapeMismatch):
            sgd_step(p, GradientSet(grads), lr=0.1)


class TestTraining:
    def test_toy_problem_is_learned(self):
        h = toy_hierarchy((2, 2, 2))
        samples = make_toy_samples(h, num_pairs=200, in_dim=8, noise=0.15, seed=0)
        params = HeadParameters.init(8, 16, h, seed=0)
        result = train(samples, params, h, LossWeights(), lr=0.1, steps=2000, log_every=500)
        assert joint_accuracy(samples, result.params, h) >= 0.95
        assert result.final_loss < result.losses[0]

    def test_loss_mostly_decreases_at_small_learning_rate(self):
        h = toy_hierarchy((2, 2, 2))
        samples = make_toy_samples(h, num_pairs=200, in_dim=8, noise=0.15, seed=1)
        params = HeadParameters.init(8, 16, h, seed=1)
        result = train(samples, params, h, LossWeights(), lr=0.01, steps=500, log_every=100)
        curve = result.losses + [result.final_loss]
        decreasing = sum(b < a for a, b in zip(curve, curve[1:]))
        assert decreasing >= 0.95 * (len(curve) - 1)

    def test_zero_steps_returns_initial_parameters(self, toy_h):
        samples = make_toy_samples(toy_h, num_pairs=20, seed=2)
        params = HeadParameters.init(8, 4, toy_h, seed=2)
        result = train(samples, params, toy_h, LossWeights(), lr=0.1, steps=0)
        assert result.params is params
        assert result.losses == []
        assert result.final_loss == pytest.approx(total_loss_and_grads(samples, params, toy_h, LossWeights())[0])

    def test_losses_record_value_before_each_update(self, toy_h):
        samples = make_toy_samples(toy_h, num_pairs=20, seed=3)
        params = HeadParameters.init(8, 4, toy_h, seed=3)
        result = train(samples, params, toy_h, LossWeights(), lr=0.1, steps=3)
        assert len(result.losses) == 3
        assert result.losses[0] == pytest.approx(total_loss_and_grads(samples, params, toy_h, LossWeights())[0])

    def test_background_samples(self, toy_h):
        samples = make_toy_samples(toy_h, num_pairs=14, seed=4)
        backgrounds = [s for s in samples if s.is_background]
        assert len(backgrounds) == 2
        assert all(s.target_sc == toy_h.background_index for s in backgrounds)
