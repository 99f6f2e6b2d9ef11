import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fd_gradient, max_rel_error, random_examples, tiny_params
from wclsm import objective as O
from wclsm.objective import TrainingExample

finite = st.floats(-5, 5)


class TestPosterior:
    def test_equal_scores_j1(self):
        assert O.softmax_posterior(0.3, [0.3]) == pytest.approx(0.5)

    def test_uniform_j4(self):
        assert O.softmax_posterior(0.1, [0.1] * 4) == pytest.approx(0.2)

    def test_direct_value(self):
        assert O.softmax_posterior(1.0, [-1.0]) == pytest.approx(1 / (1 + np.exp(-2)), abs=1e-12)

    def test_stable_for_large_gamma(self):
        assert O.softmax_posterior(1.0, [0.9], gamma=1e4) == pytest.approx(1.0)

    def test_bad_gamma(self):
        with pytest.raises(ValueError):
            O.softmax_posterior(0, [0], gamma=0)

    @given(st.lists(finite, min_size=2, max_size=6), st.floats(0.1, 20))
    def test_normalisation(self, s, gamma):
        total = sum(O.softmax_posterior(s[i], s[:i] + s[i + 1:], gamma) for i in range(len(s)))
        assert total == pytest.approx(1.0, abs=1e-12)


class TestPairwise:
    def test_zero_margin(self):
        assert O.pairwise_loss(0.2, 0.2) == pytest.approx(np.log(2))

    def test_limit(self):
        assert O.pairwise_loss(800.0, 0.0) == pytest.approx(0.0, abs=1e-300)
        assert np.isfinite(O.pairwise_loss(-800.0, 0.0))

    @given(finite, finite)
    def test_equals_neg_log_posterior(self, sp, sn):
        assert O.pairwise_loss(sp, sn) == pytest.approx(-np.log(O.softmax_posterior(sp, [sn])),
                                                        abs=1e-12)


class TestLambda:
    @pytest.mark.parametrize("y, j, expected", [(0.4, 1, 0.4), (0.4, 3, 0.2), (0.0, 1, 0.0),
                                                (0.0, 7, 0.0)])
    def test_scale(self, y, j, expected):
        assert O.lambda_scale(y, j) == pytest.approx(expected, abs=1e-15)

    def test_bad_rank(self):
        with pytest.raises(ValueError):
            O.lambda_scale(1.0, 0)

    def test_gradient_values(self):
        assert O.lambda_gradient(0.3, 0.3, 1.0) == pytest.approx(0.5)
        assert O.lambda_gradient(5.0, -2.0, 0.0) == 0.0

    @given(finite, finite, st.floats(0, 3))
    def test_matches_fd_of_weighted_pairwise(self, sp, sn, y):
        h = 1e-5
        d_neg = y * (O.pairwise_loss(sp, sn + h) - O.pairwise_loss(sp, sn - h)) / (2 * h)
        d_pos = y * (O.pairwise_loss(sp + h, sn) - O.pairwise_loss(sp - h, sn)) / (2 * h)
        lam = O.lambda_gradient(sp, sn, O.lambda_scale(y, 1))
        assert lam == pytest.approx(d_neg, abs=1e-6)
        assert -lam == pytest.approx(d_pos, abs=1e-6)


class TestCost:
    def test_values(self):
        assert O.cost_sensitive_weight(0.3, 0.0) == 0.3
        assert O.cost_sensitive_weight(0.7, 0.7) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            O.cost_sensitive_weight(-0.1)

    def test_eq2_equals_eq1(self, full_vocab):
        rng = np.random.default_rng(3)
        y = [0.3, 0.0, 1.0, 0.55]
        ex = random_examples(rng, full_vocab, n=4, J=3, weights=y)
        p = tiny_params(full_vocab)
        a = O.weighted_nll(p, ex)
        b = O.cost_sensitive_nll(p, ex, y)
        assert a.loss == b.loss


class TestWeightedLoss:
    def test_example_validation(self, full_vocab):
        ex = random_examples(np.random.default_rng(0), full_vocab, n=1)[0]
        with pytest.raises(ValueError):
            TrainingExample(ex.query, ex.positive_doc, ex.negatives, -1.0)
        with pytest.raises(ValueError):
            TrainingExample(ex.query, ex.positive_doc, [], 1.0)

    def test_unit_weights_equal_plain_nll(self, full_vocab):
        rng = np.random.default_rng(4)
        p = tiny_params(full_vocab)
        ex = random_examples(rng, full_vocab, n=5, J=4)
        rep = O.weighted_nll(p, ex)
        plain = -np.log(rep.posterior).sum()
        assert abs(rep.loss - plain) < 1e-12
        assert np.all((rep.posterior > 0) & (rep.posterior <= 1)) and rep.loss >= 0

    def test_zero_weights(self, full_vocab):
        p = tiny_params(full_vocab)
        ex = random_examples(np.random.default_rng(5), full_vocab, n=3, weights=[0, 0, 0])
        rep, g = O.batch_loss_and_grad(p, ex)
        assert rep.loss == 0.0 and not g.flat().any()

    def test_weight_two_equals_duplicate(self, full_vocab):
        rng = np.random.default_rng(6)
        p = tiny_params(full_vocab)
        ex = random_examples(rng, full_vocab, n=3)
        doubled = [TrainingExample(e.query, e.positive_doc, e.negatives, 2.0) for e in ex]
        r1, g1 = O.batch_loss_and_grad(p, ex + ex)
        r2, g2 = O.batch_loss_and_grad(p, doubled)
        assert r2.loss == pytest.approx(r1.loss, rel=1e-12)
        np.testing.assert_allclose(g2.flat(), g1.flat(), rtol=1e-10, atol=1e-14)

    def test_mismatched_negatives_rejected(self, full_vocab):
        rng = np.random.default_rng(7)
        a = random_examples(rng, full_vocab, n=1, J=2)
        b = random_examples(rng, full_vocab, n=1, J=3)
        with pytest.raises(ValueError):
            O.weighted_nll(tiny_params(full_vocab), a + b)

    @pytest.mark.parametrize("mode", ["eq1_weighted", "rank_aware_lambda"])
    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_fd(self, vocab50, mode, seed):
        rng = np.random.default_rng(seed)
        p = tiny_params(vocab50, seed=seed)
        ex = random_examples(rng, vocab50, n=3, J=2, weights=rng.uniform(0, 2, 3))
        _, g = O.batch_loss_and_grad(p, ex, gamma=2.0, mode=mode)
        num = fd_gradient(lambda q: O.batch_loss_and_grad(q, ex, 2.0, mode, False)[0].loss, p)
        assert max_rel_error(g, num) < 1e-4

    def test_fd_error_shrinks_quadratically(self, vocab50):
        # at large gamma the step-1e-4 error is truncation, not a wrong gradient
        rng = np.random.default_rng(100)
        p = tiny_params(vocab50, seed=0)
        ex = random_examples(rng, vocab50, n=2, J=2, weights=rng.uniform(0.1, 2.0, 2))
        _, g = O.batch_loss_and_grad(p, ex, gamma=3.0)
        f = lambda q: O.batch_loss_and_grad(q, ex, 3.0, need_grad=False)[0].loss
        errs = [max_rel_error(g, fd_gradient(f, p, step)) for step in (1e-4, 1e-5)]
        assert errs[1] < errs[0] / 50 and errs[1] < 1e-5

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            O.score_loss(np.zeros((1, 2)), np.ones(1), mode="listnet")

    def test_rank_aware_at_rank_one_is_weighted_pairwise(self):
        scores = np.array([[0.9, 0.1, -0.3]])
        losses, _, grad = O.score_loss(scores, np.array([0.7]), 1.0, "rank_aware_lambda")
        expect = 0.7 * (O.pairwise_loss(0.9, 0.1) + O.pairwise_loss(0.9, -0.3))
        assert losses[0] == pytest.approx(expect, abs=1e-14)
        assert grad[0, 1] == pytest.approx(O.lambda_gradient(0.9, 0.1, 0.7), abs=1e-14)

    def test_rank_aware_discount_lower_rank(self):
        scores = np.array([[0.0, 0.5, 0.4]])     # positive sits at rank 3
        losses, _, _ = O.score_loss(scores, np.array([1.0]), 1.0, "rank_aware_lambda")
        expect = (O.pairwise_loss(0, 0.5) + O.pairwise_loss(0, 0.4)) / np.log2(4)
        assert losses[0] == pytest.approx(expect, abs=1e-14)


def _random_instance(rng, n=5):
    labels = rng.integers(0, 4, n).astype(float)
    if labels.max() == 0:
        labels[rng.integers(n)] = 1 + rng.integers(3)
    return labels, rng.normal(size=n)


class TestBound:
    def test_perfect_order(self):
        b = O.ndcg_bound_check([3, 2, 1, 0], [4, 3, 2, 1])
        assert b.lhs == pytest.approx(0.0, abs=1e-15) and b.holds_unweighted and b.holds_weighted

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            O.ndcg_bound_check([0, 0], [1, 2])

    def test_sweep(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            b = O.ndcg_bound_check(*_random_instance(rng))
            assert b.holds_unweighted and b.holds_weighted
            assert b.rhs_weighted <= b.rhs_unweighted + 1e-15

    def test_hand_instance(self):
        # two docs, labels [0, 1], scores tie: NDCG = 1/log2(3)
        b = O.ndcg_bound_check([0.0, 1.0], [0.0, 0.0])
        assert b.lhs == pytest.approx(1 - 1 / np.log2(3))
        assert b.rhs_unweighted == pytest.approx(np.log(2))
