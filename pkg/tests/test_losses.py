import math

import numpy as np
import pytest

from glyconet.neuralnet import balanced_alpha, cross_entropy, focal_loss, softmax


def random_probs(rng, batch, n_classes):
    return softmax(rng.normal(0.0, 2.0, size=(batch, n_classes)))


def test_focal_at_gamma_zero_is_bitwise_cross_entropy():
    rng = np.random.Generator(np.random.Philox(key=[3, 0]))
    for _ in range(50):
        probs = random_probs(rng, 16, 5)
        labels = rng.integers(0, 5, size=16)
        f_loss, f_grad = focal_loss(probs, labels, gamma=0.0, alpha=None)
        c_loss, c_grad = cross_entropy(probs, labels)
        assert f_loss == c_loss
        assert np.array_equal(f_grad, c_grad)


def test_focal_hand_value_quarter_log_two():
    # p_y = 1/2, gamma = 2: loss = (1 - 1/2)^2 * (-log 1/2) = 0.25 * ln 2
    probs = np.array([[0.5, 0.5]])
    loss, _ = focal_loss(probs, np.array([0]), gamma=2.0)
    assert abs(loss - 0.25 * math.log(2.0)) <= 1e-12


def test_focal_downweights_easy_examples():
    easy = np.array([[0.95, 0.05]])
    hard = np.array([[0.55, 0.45]])
    label = np.array([0])
    for gamma in (0.5, 1.0, 2.0, 5.0):
        easy_focal, _ = focal_loss(easy, label, gamma=gamma)
        easy_ce, _ = cross_entropy(easy, label)
        hard_focal, _ = focal_loss(hard, label, gamma=gamma)
        hard_ce, _ = cross_entropy(hard, label)
        # the focal factor shrinks the easy sample far more than the hard one
        assert easy_focal / easy_ce < hard_focal / hard_ce


def test_per_class_weights_scale_loss_and_gradient():
    probs = np.array([[0.5, 0.5], [0.5, 0.5]])
    labels = np.array([0, 1])
    alpha = np.array([2.0, 0.5])
    loss_w, grad_w = focal_loss(probs, labels, gamma=0.0, alpha=alpha)
    base = -math.log(0.5)
    assert loss_w == pytest.approx(0.5 * (2.0 + 0.5) * base, abs=1e-12)
    _, grad_u = focal_loss(probs, labels, gamma=0.0, alpha=None)
    assert np.allclose(grad_w[0], 2.0 * grad_u[0], atol=1e-15)
    assert np.allclose(grad_w[1], 0.5 * grad_u[1], atol=1e-15)


def test_focal_gradient_matches_central_differences():
    rng = np.random.Generator(np.random.Philox(key=[11, 0]))
    logits = rng.normal(0.0, 1.5, size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    alpha = balanced_alpha(np.bincount(labels, minlength=4) + 1)
    for gamma in (0.0, 1.0, 2.0):
        _, grad = focal_loss(softmax(logits), labels, gamma=gamma, alpha=alpha)
        h = 1e-6
        num = np.zeros_like(logits)
        for i in range(logits.shape[0]):
            for j in range(logits.shape[1]):
                up, dn = logits.copy(), logits.copy()
                up[i, j] += h
                dn[i, j] -= h
                lu, _ = focal_loss(softmax(up), labels, gamma=gamma, alpha=alpha)
                ld, _ = focal_loss(softmax(dn), labels, gamma=gamma, alpha=alpha)
                num[i, j] = (lu - ld) / (2 * h)
        denom = max(np.abs(num).max(), 1e-12)
        assert np.abs(grad - num).max() / denom < 1e-6, gamma


def test_certain_correct_prediction_has_zero_loss_and_gradient_for_positive_gamma():
    probs = np.array([[1.0, 0.0, 0.0]])
    labels = np.array([0])
    loss, grad = focal_loss(probs, labels, gamma=2.0)
    assert loss == 0.0
    assert np.all(grad == 0.0)
    assert np.all(np.isfinite(grad))


def test_vanishing_probability_is_floored_not_infinite():
    probs = np.array([[1e-300, 1.0 - 1e-300]])
    loss, grad = focal_loss(probs, np.array([0]), gamma=2.0)
    assert np.isfinite(loss)
    assert np.all(np.isfinite(grad))
    assert loss <= -math.log(1e-12) + 1.0


def test_balanced_alpha_inverse_frequency_hand_values():
    alpha = balanced_alpha(np.array([10, 30]))
    assert alpha.tolist() == [40 / 20, 40 / 60]


def test_balanced_alpha_absent_class_is_zero_with_warning(caplog):
    with caplog.at_level("WARNING"):
        alpha = balanced_alpha(np.array([8, 0, 8]))
    assert alpha[1] == 0.0
    assert alpha[0] == alpha[2] == 16 / (3 * 8)
    assert any("no training samples" in r.message for r in caplog.records)


def test_balanced_alpha_input_guards():
    with pytest.raises(ValueError):
        balanced_alpha(np.array([5]))
    with pytest.raises(ValueError):
        balanced_alpha(np.array([0, 0]))
    with pytest.raises(ValueError):
        balanced_alpha(np.array([-1, 5]))


def test_loss_is_batch_mean():
    probs = np.array([[0.5, 0.5]])
    one, _ = focal_loss(probs, np.array([0]), gamma=2.0)
    four, _ = focal_loss(np.repeat(probs, 4, axis=0), np.zeros(4, np.int64), gamma=2.0)
    assert four == pytest.approx(one, abs=1e-15)
