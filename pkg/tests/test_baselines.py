"""Product rule, naive Bayes, and linear SVM fusion baselines."""

import warnings

import numpy as np
import pytest

from sensorimotor.baselines import (FeaturePair, NbModel,
                                    lift_affordance_posterior, nb_fit,
                                    nb_predict, product_rule_fuse, svm_fit,
                                    svm_margins, svm_predict)
from sensorimotor.taxonomy import TAXONOMY


def product_rule_oracle(obj_post, aff_post):
    """Brute-force 14x13 matrix arithmetic, index by index."""
    lifted = [0.0] * 14
    for o in range(14):
        for a in range(13):
            if TAXONOMY.valid[o, a]:
                col = sum(1 for oo in range(14) if TAXONOMY.valid[oo, a])
                lifted[o] += aff_post[a] / col
    fused = [obj_post[o] * lifted[o] for o in range(14)]
    total = sum(fused)
    return np.array([f / total for f in fused])


class TestProductRule:
    def test_uniform_affordance_matches_oracle(self, rng):
        obj = rng.dirichlet(np.ones(14))
        aff = np.full(13, 1.0 / 13.0)
        got = product_rule_fuse(obj, aff)
        np.testing.assert_allclose(got, product_rule_oracle(obj, aff), atol=1e-12)

    def test_random_posts_match_oracle(self, rng):
        for _ in range(25):
            obj = rng.dirichlet(np.ones(14))
            aff = rng.dirichlet(np.ones(13))
            np.testing.assert_allclose(product_rule_fuse(obj, aff),
                                       product_rule_oracle(obj, aff), atol=1e-12)

    def test_type_affordance_pins_smartphone(self, rng):
        obj = rng.dirichlet(np.ones(14))
        aff = np.zeros(13)
        aff[TAXONOMY.affordance_index("Type")] = 1.0
        fused = product_rule_fuse(obj, aff)
        phone = TAXONOMY.object_index("Smartphone")
        assert fused[phone] == pytest.approx(1.0)
        assert np.all(np.delete(fused, phone) == 0.0)

    def test_one_hot_object_stays_one_hot(self, rng):
        obj = np.zeros(14)
        obj[3] = 1.0
        aff = rng.dirichlet(np.ones(13))
        fused = product_rule_fuse(obj, aff)
        assert fused[3] == pytest.approx(1.0)

    def test_zero_mass_falls_back_with_warning(self):
        obj = np.zeros(14)
        obj[TAXONOMY.object_index("Ball")] = 1.0
        aff = np.zeros(13)
        aff[TAXONOMY.affordance_index("Type")] = 1.0  # Ball cannot Type
        with pytest.warns(UserWarning):
            fused = product_rule_fuse(obj, aff)
        np.testing.assert_array_equal(fused, obj)

    def test_output_simplex(self, rng):
        for _ in range(10):
            fused = product_rule_fuse(rng.dirichlet(np.ones(14)),
                                      rng.dirichlet(np.ones(13)))
            assert np.all(fused >= 0)
            assert fused.sum() == pytest.approx(1.0)

    def test_uniform_lift_preserves_argmax(self, rng):
        # lifting a uniform-over-objects distribution leaves argmax unchanged
        obj = rng.dirichlet(np.ones(14))
        lifted = np.full(14, 1.0 / 14.0)
        fused = obj * lifted
        assert np.argmax(fused / fused.sum()) == np.argmax(obj)

    def test_joint_permutation_invariance(self, rng):
        obj = rng.dirichlet(np.ones(14))
        aff = rng.dirichlet(np.ones(13))
        base = product_rule_fuse(obj, aff)
        perm = rng.permutation(14)

        class Permuted:
            valid = TAXONOMY.valid[perm]

        got = product_rule_fuse(obj[perm], aff, taxonomy=Permuted())
        np.testing.assert_allclose(got, base[perm], atol=1e-12)

    def test_lift_is_distribution(self, rng):
        lifted = lift_affordance_posterior(rng.dirichlet(np.ones(13)))
        assert lifted.sum() == pytest.approx(1.0)


def _gaussian_pairs(rng, centers, n=30, spread=0.15):
    pairs = []
    for label, c in enumerate(centers):
        for _ in range(n):
            f = np.asarray(c) + rng.standard_normal(len(c)) * spread
            half = len(c) // 2
            pairs.append(FeaturePair(f[:half], f[half:], label))
    return pairs


class TestNaiveBayes:
    def test_two_separated_1d_classes_perfect_training_accuracy(self, rng):
        pairs = _gaussian_pairs(rng, [(-2.0, -2.0), (2.0, 2.0)], n=40, spread=0.3)
        model = nb_fit(pairs, n_classes=2)
        preds = [int(np.argmax(nb_predict(model, p))) for p in pairs]
        assert preds == [p.label for p in pairs]

    def test_closed_form_boundary(self):
        # equal variances, means -1 and +1: posterior crosses 0.5 exactly at 0
        model = NbModel(means=np.array([[-1.0], [1.0]]),
                        variances=np.array([[1.0], [1.0]]),
                        priors=np.array([0.5, 0.5]))
        at_zero = nb_predict(model, FeaturePair(np.array([0.0]), np.array([]), 0))
        np.testing.assert_allclose(at_zero, [0.5, 0.5], atol=1e-12)
        left = nb_predict(model, FeaturePair(np.array([-0.4]), np.array([]), 0))
        assert left[0] > 0.5

    def test_identical_features_posterior_equals_priors(self, rng):
        feats = np.array([1.0, 2.0])
        pairs = []
        labels = [0] * 6 + [1] * 3  # priors 2/3, 1/3
        for l in labels:
            pairs.append(FeaturePair(feats[:1].copy(), feats[1:].copy(), l))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # variance floor fires
            model = nb_fit(pairs, n_classes=2)
        post = nb_predict(model, pairs[0])
        np.testing.assert_allclose(post, [2 / 3, 1 / 3], atol=1e-9)

    def test_variance_floor_on_constant_feature(self, rng):
        pairs = [FeaturePair(np.array([5.0]), np.array([rng.random()]), 0)
                 for _ in range(4)]
        pairs += [FeaturePair(np.array([5.0]), np.array([rng.random() + 3]), 1)
                  for _ in range(4)]
        model = nb_fit(pairs, n_classes=2)
        assert np.all(model.variances >= 1e-6)
        post = nb_predict(model, pairs[0])
        assert np.all(np.isfinite(post))

    def test_single_sample_class_warns(self):
        pairs = [FeaturePair(np.array([0.0]), np.array([0.0]), 0),
                 FeaturePair(np.array([1.0]), np.array([1.0]), 1),
                 FeaturePair(np.array([1.1]), np.array([0.9]), 1)]
        with pytest.warns(UserWarning):
            nb_fit(pairs, n_classes=2)

    def test_finite_scores_for_extreme_features(self, rng):
        pairs = _gaussian_pairs(rng, [(0.0, 0.0), (1.0, 1.0)], n=5)
        model = nb_fit(pairs, n_classes=2)
        post = nb_predict(model, FeaturePair(np.array([1e6]), np.array([-1e6]), 0))
        assert np.all(np.isfinite(post))
        assert post.sum() == pytest.approx(1.0)


class TestSvm:
    def test_linearly_separable_zero_training_errors(self, rng):
        pairs = _gaussian_pairs(rng, [(-1.5, 0.0), (1.5, 0.0)], n=30, spread=0.2)
        model = svm_fit(pairs, epochs=300, lr=0.1, reg=1e-4, n_classes=2)
        errors = sum(svm_predict(model, p) != p.label for p in pairs)
        assert errors == 0

    def test_all_identical_features_constant_prediction(self):
        pairs = [FeaturePair(np.array([1.0]), np.array([2.0]), l % 3)
                 for l in range(9)]
        model = svm_fit(pairs, epochs=50, lr=0.1, n_classes=3)
        preds = {svm_predict(model, p) for p in pairs}
        assert len(preds) == 1

    def test_scale_equivariance_of_argmax_after_retraining(self, rng):
        pairs = _gaussian_pairs(rng, [(-2.0, 1.0), (2.0, -1.0), (0.0, 2.5)],
                                n=20, spread=0.2)
        scaled = [FeaturePair(p.app_feat * 3.0, p.aff_feat * 3.0, p.label)
                  for p in pairs]
        m1 = svm_fit(pairs, epochs=400, lr=0.1, reg=0.0, n_classes=3)
        m2 = svm_fit(scaled, epochs=400, lr=0.1, reg=0.0, n_classes=3)
        preds1 = [svm_predict(m1, p) for p in pairs]
        preds2 = [svm_predict(m2, p) for p in scaled]
        assert preds1 == preds2
        assert preds1 == [p.label for p in pairs]

    def test_margins_shape(self, rng):
        pairs = _gaussian_pairs(rng, [(0.0, 0.0), (1.0, 1.0)], n=4)
        model = svm_fit(pairs, n_classes=2)
        assert svm_margins(model, pairs[0]).shape == (2,)
