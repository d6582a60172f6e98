"""Tests for attention fusion and the inconsistency penalty."""

import logging

import numpy as np
import pytest

from unisum import fusion
from unisum.diffcore import Graph, forward, gradients


def leafed(g, values, name):
    return g.leaf(np.asarray(values, dtype=np.float64), name=name)


def random_simplex(rng, m):
    raw = rng.uniform(0.05, 1.0, size=m)
    return raw / raw.sum()


class TestCombine:
    def test_hand_example(self):
        g = Graph()
        alpha = leafed(g, [0.5, 0.5], "alpha")
        beta = leafed(g, [1.0, 0.5], "beta")
        alpha_hat, fell_back = fusion.combine(g, alpha, beta, [0, 1])
        assert not fell_back
        assert np.allclose(alpha_hat.value, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    def test_one_hot_stays_one_hot(self):
        g = Graph()
        alpha = leafed(g, [0.0, 1.0, 0.0], "alpha")
        beta = leafed(g, [0.3, 0.8], "beta")
        alpha_hat, fell_back = fusion.combine(g, alpha, beta, [0, 0, 1])
        assert not fell_back
        assert np.array_equal(alpha_hat.value, [0.0, 1.0, 0.0])

    def test_uniform_beta_passes_alpha_through(self):
        g = Graph()
        alpha = leafed(g, [0.1, 0.2, 0.3, 0.4], "alpha")
        beta = leafed(g, [0.7, 0.7], "beta")
        alpha_hat, fell_back = fusion.combine(g, alpha, beta, [0, 0, 1, 1])
        assert not fell_back
        assert alpha_hat is alpha

    def test_result_is_simplex(self):
        rng = np.random.default_rng(0)
        g = Graph()
        for trial in range(50):
            m = int(rng.integers(2, 12))
            n = int(rng.integers(1, 4))
            w2s = np.sort(rng.integers(0, n, size=m))
            alpha = leafed(g, random_simplex(rng, m), f"a{trial}")
            beta = leafed(g, rng.uniform(0.05, 0.95, size=n), f"b{trial}")
            alpha_hat, fell_back = fusion.combine(g, alpha, beta, w2s)
            assert not fell_back
            assert abs(alpha_hat.value.sum() - 1.0) <= 1e-12
            assert np.all(alpha_hat.value >= 0.0)

    def test_beta_scale_invariance(self):
        g = Graph()
        alpha_values = [0.25, 0.25, 0.25, 0.25]
        beta_values = np.array([0.3, 0.9])
        w2s = [0, 0, 1, 1]
        base, _ = fusion.combine(
            g, leafed(g, alpha_values, "a"), leafed(g, beta_values, "b"), w2s)
        doubled, _ = fusion.combine(
            g, leafed(g, alpha_values, "a2"), leafed(g, 2.0 * beta_values, "b2"), w2s)
        assert np.array_equal(base.value, doubled.value)
        scaled, _ = fusion.combine(
            g, leafed(g, alpha_values, "a3"), leafed(g, 0.37 * beta_values, "b3"), w2s)
        assert np.allclose(base.value, scaled.value, atol=1e-12)

    def test_zero_denominator_falls_back_to_alpha(self, caplog):
        g = Graph()
        alpha = leafed(g, [1.0, 0.0], "alpha")
        beta = leafed(g, [0.0, 0.9], "beta")
        with caplog.at_level(logging.WARNING, logger="unisum.fusion"):
            alpha_hat, fell_back = fusion.combine(g, alpha, beta, [0, 1])
        assert fell_back
        assert alpha_hat is alpha
        assert any("falling back" in r.message for r in caplog.records)

    def test_partial_zero_beta_renormalizes(self):
        g = Graph()
        alpha = leafed(g, [0.5, 0.5], "alpha")
        beta = leafed(g, [0.0, 0.4], "beta")
        alpha_hat, fell_back = fusion.combine(g, alpha, beta, [0, 1])
        assert not fell_back
        assert np.array_equal(alpha_hat.value, [0.0, 1.0])

    def test_values_twin_matches_graph(self):
        rng = np.random.default_rng(7)
        for trial in range(30):
            m = int(rng.integers(2, 10))
            n = int(rng.integers(1, 4))
            w2s = np.sort(rng.integers(0, n, size=m))
            alpha = random_simplex(rng, m)
            beta = rng.uniform(0.05, 0.95, size=n)
            g = Graph()
            node, fb_graph = fusion.combine(
                g, leafed(g, alpha, "a"), leafed(g, beta, "b"), w2s)
            values, fb_values = fusion.combine_values(alpha, beta, w2s)
            assert fb_graph == fb_values
            assert np.array_equal(node.value, values)

    def test_values_twin_returns_copy_on_passthrough(self):
        alpha = np.array([0.5, 0.5])
        out, fell_back = fusion.combine_values(alpha, np.array([0.6]), [0, 0])
        assert not fell_back
        assert np.array_equal(out, alpha)
        out[0] = 0.0
        assert alpha[0] == 0.5


class TestTopK:
    def test_selects_largest(self):
        idx = fusion.top_k_indices(np.array([0.1, 0.6, 0.05, 0.25]), 2)
        assert list(idx) == [1, 3]

    def test_ties_prefer_lower_index(self):
        idx = fusion.top_k_indices(np.array([0.3, 0.3, 0.3, 0.1]), 2)
        assert list(idx) == [0, 1]

    def test_k_larger_than_length_clamps(self, caplog):
        with caplog.at_level(logging.WARNING, logger="unisum.fusion"):
            idx = fusion.top_k_indices(np.array([0.4, 0.6]), 3)
        assert sorted(idx) == [0, 1]
        assert any("clamping" in r.message for r in caplog.records)


class TestInconsistencyLoss:
    def test_uniform_attention_hand_value(self):
        # Four words, one sentence with full attention: every product is 1/4,
        # so the top-3 mean is 1/4 and the penalty is log 4.
        g = Graph()
        alphas = [leafed(g, [0.25, 0.25, 0.25, 0.25], "a")]
        beta = leafed(g, [1.0], "b")
        loss = fusion.inconsistency_loss(g, alphas, beta, [0, 0, 0, 0], k=3)
        assert loss.value == pytest.approx(np.log(4.0), rel=1e-12)

    def test_lower_bound_log_k(self):
        # The top-k mean of simplex weights scaled by beta <= 1 never exceeds
        # 1/k, so each step contributes at least log k.
        rng = np.random.default_rng(3)
        k = 3
        for trial in range(50):
            m = int(rng.integers(3, 15))
            n = int(rng.integers(1, 4))
            w2s = np.sort(rng.integers(0, n, size=m))
            alphas = [random_simplex(rng, m) for _ in range(3)]
            beta = rng.uniform(0.05, 0.95, size=n)
            loss = fusion.inconsistency_loss_values(alphas, beta, w2s, k)
            assert loss >= np.log(k) - 1e-12

    def test_graph_matches_values_twin(self):
        rng = np.random.default_rng(9)
        m, n, k = 9, 3, 3
        w2s = np.sort(rng.integers(0, n, size=m))
        alpha_values = [random_simplex(rng, m) for _ in range(4)]
        beta_values = rng.uniform(0.1, 0.9, size=n)
        g = Graph()
        alphas = [leafed(g, a, f"a{t}") for t, a in enumerate(alpha_values)]
        beta = leafed(g, beta_values, "b")
        node = fusion.inconsistency_loss(g, alphas, beta, w2s, k)
        twin = fusion.inconsistency_loss_values(alpha_values, beta_values, w2s, k)
        assert node.value == pytest.approx(twin, rel=1e-12)

    def test_gradient_step_on_beta_decreases_loss(self):
        rng = np.random.default_rng(5)
        m, n, k = 8, 2, 3
        w2s = np.sort(rng.integers(0, n, size=m))
        alpha_values = [random_simplex(rng, m) for _ in range(3)]
        beta_values = rng.uniform(0.2, 0.8, size=n)
        g = Graph()
        beta = g.param(beta_values.copy(), name="beta")
        alphas = [leafed(g, a, f"a{t}") for t, a in enumerate(alpha_values)]
        loss = fusion.inconsistency_loss(g, alphas, beta, w2s, k)
        before = float(loss.value)
        grad = gradients(g, loss)[beta]
        stepped = beta_values - 0.05 * grad
        after = forward(g, {beta: stepped}, [loss])[0]
        assert after < before

    def test_empty_sequence_scores_zero(self):
        assert fusion.inconsistency_loss_values([], np.array([0.5]), [0], 3) == 0.0


class TestInconsistencyRate:
    def test_counts_steps_in_low_attention_sentences(self):
        beta = np.array([0.9, 0.1])
        w2s = [0, 0, 1, 1]
        focused_first = np.array([0.7, 0.1, 0.1, 0.1])
        focused_second = np.array([0.1, 0.1, 0.1, 0.7])
        rate, steps = fusion.inconsistency_rate(
            [focused_first, focused_second], beta, w2s)
        assert rate == 0.5
        assert steps == [1]

    def test_all_consistent_when_beta_uniform(self):
        beta = np.array([0.5, 0.5])
        alphas = [np.array([0.4, 0.1, 0.4, 0.1]) for _ in range(3)]
        rate, steps = fusion.inconsistency_rate(alphas, beta, [0, 0, 1, 1])
        assert rate == 0.0
        assert steps == []

    def test_empty_sequence(self):
        rate, steps = fusion.inconsistency_rate([], np.array([0.5]), [0])
        assert rate == 0.0
        assert steps == []

    def test_argmax_ties_use_lower_index(self):
        beta = np.array([0.9, 0.1])
        tied = np.array([0.5, 0.5])
        rate, steps = fusion.inconsistency_rate([tied], beta, [0, 1])
        assert rate == 0.0
        assert steps == []

    def test_report_bundles_loss_rate_and_steps(self):
        beta = np.array([0.8, 0.2])
        w2s = [0, 0, 1]
        alphas = [np.array([0.2, 0.2, 0.6])]
        report = fusion.inconsistency_report(alphas, beta, w2s, k=3)
        assert report.rate == 1.0
        assert report.steps == [0]
        assert report.num_steps == 1
        assert report.loss == pytest.approx(
            fusion.inconsistency_loss_values(alphas, beta, w2s, 3), rel=1e-12)
