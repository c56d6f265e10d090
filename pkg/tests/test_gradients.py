"""Analytic gradients versus central finite differences, in 64-bit mode.

Instances are drawn with continuous random parameters and re-drawn when
they sit near a relu kink or the zero-norm corner, where the loss is not
differentiable and finite differences are not a valid oracle.
"""

import numpy as np
import pytest

from da3d.model import GradientSet, backward, forward

from _oracles import (
    batch_total_loss,
    finite_difference_gradients,
    max_relative_error,
    random_bags,
    random_params,
    well_conditioned,
)


def draw_instance(seed, dim=4, batch=4, num_classes=2):
    """Deterministically draw a well-conditioned random instance."""
    attempt = 0
    while True:
        rng = np.random.default_rng((seed, attempt))
        params = random_params(rng, dim, 3, 3, 2, num_classes)
        bags = random_bags(rng, batch, dim)
        labels = rng.integers(0, num_classes, size=batch)
        if well_conditioned(bags, params):
            return params, bags, labels
        attempt += 1


def analytic_gradients(params, bags, labels):
    _, traces, d_logits, d_normalized = batch_total_loss(bags, labels, params)
    return backward(bags, traces, params, d_logits, d_normalized)


class TestGradientsMatchFiniteDifferences:
    @pytest.mark.parametrize("seed", range(12))
    def test_small_random_instances(self, seed):
        params, bags, labels = draw_instance(seed)
        grads = analytic_gradients(params, bags, labels)
        numeric = finite_difference_gradients(bags, labels, params)
        for name, analytic in grads.field_arrays().items():
            assert max_relative_error(analytic, numeric[name]) < 1e-4, name

    def test_wide_instance(self):
        params, bags, labels = draw_instance(999, dim=8, batch=8)
        grads = analytic_gradients(params, bags, labels)
        numeric = finite_difference_gradients(bags, labels, params)
        for name, analytic in grads.field_arrays().items():
            assert max_relative_error(analytic, numeric[name]) < 1e-4, name


class TestStructuralGradientFacts:
    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(0)
        params = random_params(rng, 4, 3, 3, 2, 2)
        bags = random_bags(rng, 3, 4)
        traces = [forward(Z, params) for Z in bags]
        grads = backward(
            bags, traces, params,
            np.zeros((3, 2)), np.zeros((3, 2)),
        )
        for name, arr in grads.field_arrays().items():
            assert np.all(arr == 0.0), name

    def test_single_slice_attention_gradients_exactly_zero(self):
        # N=1 bags: the softmax Jacobian is identically zero, so W1 and w2
        # receive no gradient at all.
        rng = np.random.default_rng(1)
        params = random_params(rng, 4, 3, 3, 2, 2)
        bags = [rng.standard_normal((1, 4)) for _ in range(4)]
        labels = rng.integers(0, 2, size=4)
        grads = analytic_gradients(params, bags, labels)
        assert np.all(grads.w1 == 0.0)
        assert np.all(grads.w2 == 0.0)
        assert np.abs(grads.clf_w).max() > 0  # the rest of the model trains

    def test_mixed_slice_counts_only_multislice_touch_attention(self):
        rng = np.random.default_rng(2)
        labels = np.array([0, 1])
        # A fully dead relu layer legitimately zeroes the attention-path
        # gradient, so draw until the instance has live hidden units.
        attempt = 0
        while True:
            params = random_params(rng, 4, 3, 3, 2, 2)
            multi = [rng.standard_normal((3, 4)) for _ in range(2)]
            live = all(
                (forward(Z, params).head_hidden > 0).any() for Z in multi
            )
            if live and well_conditioned(multi, params):
                break
            attempt += 1
            assert attempt < 50
        single = [Z[:1] for Z in multi]
        grads_single = analytic_gradients(params, single, labels)
        assert np.all(grads_single.w1 == 0.0)
        grads_multi = analytic_gradients(params, multi, labels)
        assert np.abs(grads_multi.w1).max() > 0

    def test_degenerate_embedding_skips_normalization_path(self):
        # Zero weights with zero biases give h = 0 exactly: the bag is
        # flagged degenerate and the h~ upstream gradient must not flow
        # (there is no Jacobian at the zero-norm corner), while the
        # classifier path still produces finite gradients.
        from da3d.model import ModelParams

        params = ModelParams(
            w1=np.zeros((3, 4)), w2=np.zeros(3),
            head_w1=np.zeros((3, 4)), head_b1=np.zeros(3),
            head_w2=np.zeros((2, 3)), head_b2=np.zeros(2),
            clf_w=np.zeros((2, 2)), clf_b=np.zeros(2),
        )
        rng = np.random.default_rng(7)
        bags = [rng.standard_normal((3, 4))]
        trace = forward(bags[0], params)
        assert trace.degenerate
        d_logits = np.array([[0.5, -0.5]])
        d_normalized = np.array([[100.0, -100.0]])  # must be ignored
        grads = backward(bags, [trace], params, d_logits, d_normalized)
        for name, arr in grads.field_arrays().items():
            assert np.isfinite(arr).all(), name
        # The classifier bias still learns from the logits gradient.
        np.testing.assert_array_equal(grads.clf_b, [0.5, -0.5])
        # h = 0, so the classifier weight gradient (outer with h) is zero.
        assert np.all(grads.clf_w == 0.0)
        # Nothing reaches the embedding head through either path.
        assert np.all(grads.head_w2 == 0.0)

    def test_gradient_shapes_mirror_params(self):
        rng = np.random.default_rng(3)
        params = random_params(rng, 5, 4, 3, 2, 2)
        grads = GradientSet.zeros_like(params)
        for name, arr in grads.field_arrays().items():
            assert arr.shape == getattr(params, name).shape

    def test_dropout_path_gradient(self):
        # Fixed dropout mask: the loss is a smooth function of the
        # parameters, so finite differences still apply.
        rng = np.random.default_rng(4)
        params = random_params(rng, 4, 3, 6, 2, 2)
        bags = [rng.standard_normal((3, 4)) for _ in range(2)]
        labels = np.array([0, 1])
        masks = [rng.random(6) >= 0.5 for _ in range(2)]
        rate = 0.5

        def loss_value():
            from da3d.losses import BatchViews, total_loss

            traces = [forward(Z, params, m, rate) for Z, m in zip(bags, masks)]
            views = BatchViews(
                logits=np.stack([t.logits for t in traces]),
                normalized=np.stack([t.normalized for t in traces]),
                labels=labels,
                degenerate=np.asarray([t.degenerate for t in traces]),
            )
            return total_loss(views), traces

        (breakdown, d_logits, d_normalized), traces = loss_value()
        grads = backward(bags, traces, params, d_logits, d_normalized)
        step = 1e-6
        for name in ("head_w2", "head_b1", "clf_w"):
            theta = getattr(params, name)
            numeric = np.zeros_like(theta)
            for index in range(theta.size):
                original = theta.flat[index]
                theta.flat[index] = original + step
                up = loss_value()[0][0].total
                theta.flat[index] = original - step
                down = loss_value()[0][0].total
                theta.flat[index] = original
                numeric.flat[index] = (up - down) / (2 * step)
            assert max_relative_error(getattr(grads, name), numeric) < 1e-4, name
