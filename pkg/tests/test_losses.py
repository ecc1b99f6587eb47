import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attcmi import losses as L
from attcmi import tensor as T
from attcmi.tensor import Tensor

from helpers import check_op_grads


def const(value, shape=(4, 1)):
    return Tensor(np.full(shape, value))


class TestDiscriminatorLoss:
    def test_half_half_is_two_log_two(self):
        val = L.discriminator_loss(const(0.5), const(0.5)).item()
        assert val == pytest.approx(2 * np.log(2), abs=1e-12)

    def test_perfect_discriminator_near_zero(self):
        val = L.discriminator_loss(const(L.EPS), const(1 - L.EPS)).item()
        assert val == pytest.approx(0.0, abs=1e-6)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        fake = rng.uniform(0.05, 0.95, (6, 1))
        real = rng.uniform(0.05, 0.95, (6, 1))
        val = L.discriminator_loss(Tensor(fake), Tensor(real)).item()
        expect = np.mean([-np.log(1 - f) for f in fake.ravel()]) + \
            np.mean([-np.log(r) for r in real.ravel()])
        assert val == pytest.approx(expect, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_finite_for_any_logit(self, a, b):
        # raw sigmoid outputs arbitrarily close to 0/1 stay finite after clamping
        fake = T.sigmoid(Tensor([[a * 100]]))
        real = T.sigmoid(Tensor([[b * 100]]))
        assert np.isfinite(L.discriminator_loss(fake, real).item())


class TestCategoricalLoss:
    def test_confident_correct_is_zero(self):
        probs = Tensor(np.eye(10)[[3, 7]])
        assert L.categorical_loss(probs, [3, 7]).item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_is_log_ten(self):
        probs = Tensor(np.full((5, 10), 0.1))
        val = L.categorical_loss(probs, [0, 3, 5, 7, 9]).item()
        assert val == pytest.approx(np.log(10), abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(4, 10))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        labels = rng.integers(0, 10, 4)
        val = L.categorical_loss(Tensor(probs), labels).item()
        expect = np.mean([-np.log(probs[i, labels[i]]) for i in range(4)])
        assert val == pytest.approx(expect, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            L.categorical_loss(Tensor(np.full((1, 10), 0.1)), [10])


class TestImageLoss:
    def test_perfect_prediction_near_zero(self):
        x = Tensor(np.random.default_rng(2).uniform(0, 1, (2, 28, 28)))
        val = L.image_loss(x, x, const(1 - L.EPS, (2, 1)), lam=100.0).item()
        assert val == pytest.approx(0.0, abs=1e-6)

    def test_analytic_point(self):
        target = Tensor(np.full((2, 4, 4), 0.3))
        pred = Tensor(np.full((2, 4, 4), 0.31))
        val = L.image_loss(pred, target, const(0.5, (2, 1)), lam=100.0).item()
        assert val == pytest.approx(100 * 0.01 + np.log(2), abs=1e-10)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        pred = rng.uniform(0, 1, (3, 5, 5))
        target = rng.uniform(0, 1, (3, 5, 5))
        dfake = rng.uniform(0.1, 0.9, (3, 1))
        val = L.image_loss(Tensor(pred), Tensor(target), Tensor(dfake), lam=42.0).item()
        expect = 42.0 * np.abs(pred - target).mean() - np.log(dfake).mean()
        assert val == pytest.approx(expect, abs=1e-12)


class TestGeneratorTotal:
    def test_unit_sigmas_reduce_to_plain_weighting(self):
        u = L.UncertaintyParams.fresh(0.0)
        val = L.generator_total(Tensor(2.0), Tensor(3.0), u).item()
        assert val == pytest.approx(2.0 + 1.5, abs=1e-12)

    def test_log_sigma_gradient_matches_finite_differences(self):
        u = L.UncertaintyParams.fresh(0.3)
        l_cat, l_img = Tensor(2.0), Tensor(1.2)
        check_op_grads(lambda: L.generator_total(l_cat, l_img, u),
                       [u.log_sigma1, u.log_sigma2], step=1e-6, rtol=1e-6)

    def test_sigma2_minimizer_matches_first_order_condition(self):
        # over sigma2 alone, d/dsigma2 [b/(2 s^2) + log s] = 0 at s^2 = b
        b = 0.7
        grid = np.linspace(0.05, 3.0, 2000)
        vals = b / (2 * grid ** 2) + np.log(grid)
        best = grid[np.argmin(vals)]
        assert best ** 2 == pytest.approx(b, rel=1e-2)

    def test_barrier_blows_up_at_both_ends(self):
        l_cat, l_img = Tensor(1.0), Tensor(1.0)
        tiny = L.UncertaintyParams.fresh(-12.0)
        huge = L.UncertaintyParams.fresh(12.0)
        mid = L.UncertaintyParams.fresh(0.0)
        v_mid = L.generator_total(l_cat, l_img, mid).item()
        assert L.generator_total(l_cat, l_img, tiny).item() > v_mid + 100
        assert L.generator_total(l_cat, l_img, huge).item() > v_mid + 10

    def test_gradients_flow_to_task_losses(self):
        u = L.UncertaintyParams.fresh(0.1)
        l_cat = Tensor(2.0, requires_grad=True)
        l_img = Tensor(3.0, requires_grad=True)
        T.backward(L.generator_total(l_cat, l_img, u))
        assert l_cat.grad is not None and l_cat.grad != 0
        assert l_img.grad is not None and l_img.grad != 0
        assert u.log_sigma1.grad is not None and u.log_sigma1.grad != 0


@pytest.mark.parametrize("seed", range(10))
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    fake_logits = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    real_logits = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    check_op_grads(
        lambda: L.discriminator_loss(T.sigmoid(fake_logits), T.sigmoid(real_logits)),
        [fake_logits, real_logits], step=1e-5, rtol=1e-4)

    logits = Tensor(rng.normal(size=(3, 10)), requires_grad=True)
    labels = rng.integers(0, 10, 3)
    check_op_grads(lambda: L.categorical_loss(T.softmax(logits), labels),
                   [logits], step=1e-5, rtol=1e-4)

    pred = Tensor(rng.uniform(0.1, 0.9, (2, 4, 4)), requires_grad=True)
    target = Tensor(rng.uniform(0, 1, (2, 4, 4)))
    dflog = Tensor(rng.normal(size=(2, 1)), requires_grad=True)
    check_op_grads(lambda: L.image_loss(pred, target, T.sigmoid(dflog), lam=10.0),
                   [pred, dflog], step=1e-5, rtol=1e-4)
