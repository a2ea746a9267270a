import math

import numpy as np
import pytest

from metaemb.errors import ConfigError, LossError
from metaemb.losses import RECON_KINDS, recon_loss


def kl_scalar_oracle(pred_row, target_row):
    # independent scalar evaluation with math.* only
    def softmax(row):
        hi = max(row)
        exps = [math.exp(v - hi) for v in row]
        s = sum(exps)
        return [e / s for e in exps]

    p = softmax(target_row)
    q = softmax(pred_row)
    return sum(pi * (math.log(pi) - math.log(qi)) for pi, qi in zip(p, q))


def test_all_losses_zero_on_identical_inputs():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 6))
    for kind in RECON_KINDS:
        value, grad = recon_loss(kind, x, x)
        assert value == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(grad, 0.0, atol=1e-15)


def test_mse_mae_hand_values():
    pred = np.array([[1.0, 2.0], [3.0, 5.0]])
    target = np.array([[0.0, 2.0], [4.0, 3.0]])
    # residuals: 1, 0, -1, 2
    value, grad = recon_loss("mse", pred, target)
    assert value == pytest.approx((1 + 0 + 1 + 4) / 2.0)
    assert np.allclose(grad, np.array([[1.0, 0.0], [-1.0, 2.0]]))
    value, grad = recon_loss("mae", pred, target)
    assert value == pytest.approx((1 + 0 + 1 + 2) / 2.0)
    # subgradient at the zero residual is 0
    assert np.allclose(grad, np.array([[0.5, 0.0], [-0.5, 0.5]]))


def test_kl_hand_value():
    # target (0,0), predicted (1,0): independently computed 0.12011450695827752
    value, _ = recon_loss("kl", np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))
    assert value == pytest.approx(0.12011450695827752, abs=1e-12)
    assert value == pytest.approx(kl_scalar_oracle([1.0, 0.0], [0.0, 0.0]), abs=1e-15)


def test_kl_nonnegative_and_zero_iff_equal_softmax():
    rng = np.random.default_rng(1)
    for _ in range(20):
        pred = rng.normal(size=(3, 5))
        target = rng.normal(size=(3, 5))
        value, _ = recon_loss("kl", pred, target)
        assert value >= 0.0
    # rows equal after softmax <=> rows differ by a constant shift
    target = rng.normal(size=(3, 5))
    value, _ = recon_loss("kl", target + 2.5, target)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_kl_asymmetry_witness():
    a = np.array([[1.0, 0.0]])
    b = np.array([[0.0, 0.0]])
    ab, _ = recon_loss("kl", a, b)
    ba, _ = recon_loss("kl", b, a)
    assert abs(ab - ba) > 1e-3


def test_scp_antiparallel_and_scale_invariance():
    rows = np.array([[0.6, 0.8], [1.0, 0.0]])
    value, _ = recon_loss("scp", -rows, rows)
    # cosine -1 per row: (1 - (-1))^2 = 4, summed over 2 rows
    assert value == pytest.approx(8.0, abs=1e-12)
    rng = np.random.default_rng(2)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    base, _ = recon_loss("scp", a, b)
    scaled, _ = recon_loss("scp", 3.7 * a, b)
    assert scaled == pytest.approx(base, abs=1e-12)
    mse_scaled, _ = recon_loss("mse", 2.0 * b, b)
    assert mse_scaled > 0.0  # scale invariance is specific to scp


def test_scp_symmetry():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 6))
    b = rng.normal(size=(5, 6))
    ab, _ = recon_loss("scp", a, b)
    ba, _ = recon_loss("scp", b, a)
    assert ab == pytest.approx(ba, abs=1e-12)


def test_scp_zero_row_rejected():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(LossError):
        recon_loss("scp", a, b)
    with pytest.raises(LossError):
        recon_loss("scp", b, a)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    eps = 1e-6
    for kind in RECON_KINDS:
        pred = rng.normal(size=(3, 5))
        target = rng.normal(size=(3, 5))
        _, grad = recon_loss(kind, pred, target)
        for i in range(pred.shape[0]):
            for j in range(pred.shape[1]):
                orig = pred[i, j]
                pred[i, j] = orig + eps
                hi, _ = recon_loss(kind, pred, target)
                pred[i, j] = orig - eps
                lo, _ = recon_loss(kind, pred, target)
                pred[i, j] = orig
                numeric = (hi - lo) / (2 * eps)
                assert grad[i, j] == pytest.approx(numeric, abs=1e-5), kind


def test_bad_inputs():
    with pytest.raises(ConfigError):
        recon_loss("mse", np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ConfigError):
        recon_loss("nope", np.zeros((2, 3)), np.zeros((2, 3)))
