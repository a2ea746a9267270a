import numpy as np
import pytest

from metaemb.errors import ConfigError, FormatError, TrainingError
from metaemb.losses import recon_loss
from metaemb.net import (Batch, FeedForwardNet, Layer, TrainConfig,
                         finite_diff_check, init_normal, load_checkpoint,
                         rng_streams, save_checkpoint, split_train_val)


def identity_net(dim):
    return FeedForwardNet([Layer(np.eye(dim), np.zeros(dim), "identity")])


def test_init_normal_determinism_and_degenerate_std():
    a = init_normal((4, 5), 0.0, 1.0, seed=7)
    b = init_normal((4, 5), 0.0, 1.0, seed=7)
    assert np.array_equal(a, b)
    c = init_normal((3, 3), 2.5, 0.0, seed=1)
    assert np.array_equal(c, np.full((3, 3), 2.5))
    with pytest.raises(ConfigError):
        init_normal((2, 2), 0.0, -1.0, seed=0)


def test_init_normal_sample_statistics():
    samples = init_normal((1000, 1000), 0.0, 1.0, seed=11)
    assert abs(samples.mean()) < 0.01
    assert abs(samples.std() - 1.0) < 0.01


def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.hidden_dims == (200,)
    assert cfg.batch_size == 32
    assert cfg.epochs == 50
    assert cfg.dropout_p == 0.2
    assert cfg.init_mean == 0.0 and cfg.init_std == 1.0
    assert cfg.seed == 13
    assert cfg.early_stop_patience == 5
    with pytest.raises(ConfigError):
        TrainConfig(dropout_p=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)


def test_identity_network_passthrough():
    net = identity_net(4)
    x = np.random.default_rng(0).normal(size=(3, 4))
    out = net.forward(x).output
    assert np.array_equal(out, x)


def test_tanh_zero_input():
    net = FeedForwardNet.init([3, 5], ["tanh"], seed=2)
    out = net.forward(np.zeros((2, 3))).output
    assert np.array_equal(out, np.zeros((2, 5)))


def test_tanh_output_range():
    net = FeedForwardNet.init([4, 6, 3], ["tanh", "tanh"], std=3.0, seed=5)
    out = net.forward(np.random.default_rng(1).normal(size=(8, 4)) * 10).output
    assert (out > -1.0).all() and (out < 1.0).all()


def test_eval_mode_independent_of_rng():
    net = FeedForwardNet.init([4, 6, 4], ["tanh", "identity"], dropout_p=0.5, seed=3)
    x = np.random.default_rng(2).normal(size=(5, 4))
    a = net.forward(x, train_mode=False).output
    b = net.forward(x, train_mode=False, rng=np.random.default_rng(99)).output
    assert np.array_equal(a, b)


def test_dimension_mismatch_rejected():
    net = FeedForwardNet.init([4, 2], ["identity"], seed=0)
    with pytest.raises(ConfigError):
        net.forward(np.zeros((3, 5)))
    with pytest.raises(ConfigError):
        FeedForwardNet.init([4, 3, 2], ["tanh"], seed=0)


def test_zero_loss_grad_gives_zero_gradients():
    net = FeedForwardNet.init([4, 5, 3], ["tanh", "identity"], seed=4)
    x = np.random.default_rng(3).normal(size=(2, 4))
    cache = net.forward(x)
    grads, gin = net.backward(cache, np.zeros((2, 3)))
    for dW, db in grads:
        assert np.allclose(dW, 0.0) and np.allclose(db, 0.0)
    assert np.allclose(gin, 0.0)


def test_linear_layer_closed_form_gradient():
    # single linear layer under batch-mean squared error:
    # dW = 2 X^T (XW - Y) / M, db = 2 * colsum(XW - Y) / M
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    W = np.array([[0.5, -1.0], [1.0, 0.5]])
    Y = np.eye(2)
    net = FeedForwardNet([Layer(W.copy(), np.zeros(2), "identity")])
    cache = net.forward(X)
    _, grad_pred = recon_loss("mse", cache.output, Y)
    grads, _ = net.backward(cache, grad_pred)
    dW, db = grads[0]
    assert np.allclose(dW, [[18.0, -6.0], [25.0, -8.0]])
    assert np.allclose(db, [7.0, -2.0])


def test_finite_diff_small_nets():
    rng = np.random.default_rng(6)
    configs = [
        ([5, 4], ["identity"], 0.0, "mse"),
        ([5, 4, 5], ["tanh", "identity"], 0.0, "scp"),
        ([4, 6, 4], ["tanh", "identity"], 0.3, "kl"),
        ([3, 5, 3], ["tanh", "softmax-rows"], 0.2, "mse"),
    ]
    for dims, acts, p, kind in configs:
        net = FeedForwardNet.init(dims, acts, dropout_p=p, std=0.7,
                                  seed=int(rng.integers(1 << 32)))
        batch = Batch(rng.normal(size=(3, dims[0])))
        target = rng.normal(size=(3, dims[-1]))
        if kind == "mse" and acts[-1] == "softmax-rows":
            target = np.abs(target) + 0.1
            target /= target.sum(axis=1, keepdims=True)

        def loss_fn(pred, _b, target=target, kind=kind):
            return recon_loss(kind, pred, target)

        err = finite_diff_check(net, loss_fn, batch, epsilon=1e-5,
                                rng=np.random.default_rng(0))
        assert err < 1e-6, (dims, acts, p, kind, err)


def test_inverted_dropout_preserves_expectation():
    net = FeedForwardNet.init([6, 8, 6], ["tanh", "identity"], dropout_p=0.2,
                              std=0.6, seed=9)
    x = np.random.default_rng(4).normal(size=(4, 6))
    clean = net.forward(x, train_mode=False).outs[0]
    rng = np.random.default_rng(10)
    acc = np.zeros_like(clean)
    n = 10_000
    for _ in range(n):
        masks = net.draw_masks(x.shape[0], rng)
        acc += net.forward(x, train_mode=True, masks=masks).outs[0]
    acc /= n
    assert np.allclose(acc, clean, rtol=0.02, atol=0.01)


def test_sgd_step_arithmetic_and_linearity():
    net = FeedForwardNet([Layer(np.array([[1.0]]), np.zeros(1), "identity")])
    net.sgd_step([(np.array([[0.5]]), np.zeros(1))], 0.1)
    assert net.layers[0].W[0, 0] == pytest.approx(0.95)
    # lr 0 leaves parameters unchanged
    net.sgd_step([(np.array([[123.0]]), np.zeros(1))], 0.0)
    assert net.layers[0].W[0, 0] == pytest.approx(0.95)
    # two half steps equal one full step for a constant gradient
    a = FeedForwardNet([Layer(np.array([[1.0]]), np.zeros(1), "identity")])
    b = a.copy()
    g = [(np.array([[2.0]]), np.zeros(1))]
    a.sgd_step(g, 0.1)
    b.sgd_step(g, 0.05)
    b.sgd_step(g, 0.05)
    assert a.layers[0].W[0, 0] == pytest.approx(b.layers[0].W[0, 0])


def test_sgd_step_rejects_non_finite():
    net = FeedForwardNet.init([2, 2], ["identity"], seed=0)
    with pytest.raises(TrainingError, match="layer0"):
        net.sgd_step([(np.array([[np.nan, 0.0], [0.0, 0.0]]), np.zeros(2))], 0.1)


def test_rng_streams_deterministic_and_distinct():
    a = rng_streams(13, 3)
    b = rng_streams(13, 3)
    va = [s.normal(size=4) for s in a]
    vb = [s.normal(size=4) for s in b]
    for x, y in zip(va, vb):
        assert np.array_equal(x, y)
    assert not np.array_equal(va[0], va[1])


def test_split_train_val():
    tr, va = split_train_val(100, np.random.default_rng(0), 0.1)
    assert len(tr) == 90 and len(va) == 10
    assert sorted(np.concatenate([tr, va])) == list(range(100))
    tr, va = split_train_val(1, np.random.default_rng(0), 0.5)
    assert len(tr) == 1 and len(va) == 0


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = FeedForwardNet.init([4, 3, 4], ["tanh", "identity"], dropout_p=0.2,
                              std=1.3, seed=21)
    tokens = ["alpha", "beta", "gamma"]
    matrix = np.random.default_rng(5).normal(size=(3, 4))
    path = tmp_path / "model.npz"
    save_checkpoint(path, method="test[loss=mse]", tokens=tokens, matrix=matrix,
                    nets={"ae0": net}, extra={"loss": "mse"})
    ckpt = load_checkpoint(path)
    assert ckpt.method == "test[loss=mse]"
    assert ckpt.tokens == tuple(tokens)
    assert ckpt.matrix.tobytes() == matrix.tobytes()
    loaded = ckpt.nets["ae0"]
    assert loaded.dropout_p == net.dropout_p
    for la, lb in zip(loaded.layers, net.layers):
        assert la.W.tobytes() == lb.W.tobytes()
        assert la.b.tobytes() == lb.b.tobytes()
        assert la.activation == lb.activation
    assert ckpt.extra == {"loss": "mse"}


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "bad.npz"
    import json
    header = np.frombuffer(json.dumps({"version": 99, "nets": {}}).encode(),
                           dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=header, tokens=np.array(["a"]),
                 matrix=np.zeros((1, 1)), flagged=np.zeros(1, dtype=bool))
    with pytest.raises(FormatError):
        load_checkpoint(path)
