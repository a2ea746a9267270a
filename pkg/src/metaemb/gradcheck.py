"""Finite-difference verification across every loss in the toolkit.

Builds small nets, checks analytic gradients for the four
reconstruction losses, the row-softmax activation path, and every
supervised loss composed with the exp(-distance) head under all four
distance kinds (full siamese assembly, dropout masks frozen).
"""

import numpy as np

from .errors import ConfigError
from .losses import RECON_KINDS, recon_loss
from .mtl import DISTANCE_KINDS, SIM_KINDS, _distances, build_mtl_model, mtl_step
from .net import (Batch, FeedForwardNet, TrainConfig, dropout_mask,
                  finite_diff_check, max_rel_grad_error)

MAX_DIM = 16
MAX_BATCH = 8
THRESHOLD = 1e-4


def _recon_check(kind, dims, batch_size, eps, rng, corrupt=None):
    net = FeedForwardNet.init(dims, ["tanh"] * (len(dims) - 2) + ["identity"],
                              dropout_p=0.2, mean=0.0, std=0.8,
                              seed=int(rng.integers(2**63)))
    inputs = rng.normal(size=(batch_size, dims[0]))
    targets = rng.normal(size=(batch_size, dims[-1]))

    def loss_fn(pred, _batch):
        return recon_loss(kind, pred, targets)

    if corrupt is None:
        return finite_diff_check(net, loss_fn, Batch(inputs), epsilon=eps,
                                 rng=np.random.default_rng(0))
    return _corrupted_net_check(net, loss_fn, Batch(inputs), eps, corrupt)


def _softmax_check(dims, batch_size, eps, rng):
    # row-softmax output layer against a distribution target under MSE
    net = FeedForwardNet.init(dims, ["tanh"] * (len(dims) - 2) + ["softmax-rows"],
                              dropout_p=0.2, mean=0.0, std=0.8,
                              seed=int(rng.integers(2**63)))
    inputs = rng.normal(size=(batch_size, dims[0]))
    raw = rng.random((batch_size, dims[-1])) + 0.1
    targets = raw / raw.sum(axis=1, keepdims=True)

    def loss_fn(pred, _batch):
        return recon_loss("mse", pred, targets)

    return finite_diff_check(net, loss_fn, Batch(inputs), epsilon=eps,
                             rng=np.random.default_rng(0))


def _corrupted_net_check(net, loss_fn, batch, eps, corrupt):
    masks = net.draw_masks(batch.m, np.random.default_rng(0)) \
        if net.dropout_p > 0 else None
    cache = net.forward(batch.inputs, train_mode=net.dropout_p > 0, masks=masks)
    _, gpred = loss_fn(cache.output, batch)
    grads, _ = net.backward(cache, gpred)
    flat = []
    for i, (dW, db) in enumerate(grads):
        if corrupt == f"layer{i}.W":
            dW = dW + 0.01
        if corrupt == f"layer{i}.b":
            db = db + 0.01
        flat.extend([dW, db])

    def closure():
        c = net.forward(batch.inputs, train_mode=net.dropout_p > 0, masks=masks)
        return loss_fn(c.output, batch)[0]

    return max_rel_grad_error([a for _, a in net.param_items()], flat, closure, eps)


def _mtl_check(sim_kind, distance_kind, in_dim, shared, batch_size, eps, seed,
               corrupt=None):
    """Full siamese check; inputs are redrawn (deterministically) until
    every distance sits safely away from its kinks/clamps."""
    config = TrainConfig(hidden_dims=(shared,), dropout_p=0.2, init_std=0.6,
                         seed=seed, lambda_=0.7)
    model = build_mtl_model(in_dim, config, distance_kind=distance_kind,
                            recon_kind="mse", sim_kind=sim_kind,
                            tower_dims=(max(2, shared - 1), max(2, shared - 2)),
                            seed=seed)
    attempt = 0
    while True:
        rng = np.random.default_rng(seed + 7919 * attempt)
        x1 = rng.normal(size=(batch_size, in_dim))
        x2 = rng.normal(size=(batch_size, in_dim))
        y = rng.uniform(0.1, 0.9, size=batch_size)
        masks = (dropout_mask(rng, (batch_size, shared), config.dropout_p),
                 dropout_mask(rng, (batch_size, shared), config.dropout_p))
        t1 = model.tower.forward(model.encoder.forward(x1).output * masks[0]).output
        t2 = model.tower.forward(model.encoder.forward(x2).output * masks[1]).output
        d_raw, _ = _distances(distance_kind, t1, t2)
        margin_ok = (np.abs(d_raw) > 1e-3).all()
        if distance_kind == "manhattan":
            margin_ok &= (np.abs(t1 - t2) > 1e-4).all()
        if margin_ok or attempt >= 50:
            break
        attempt += 1

    _, grads = mtl_step(model, x1, x2, y, masks=masks)
    params = []
    flats = []
    for name, net in model.nets().items():
        if name not in grads:
            continue
        for i, (dW, db) in enumerate(grads[name]):
            if corrupt == f"{name}.layer{i}.W":
                dW = dW + 0.01
            if corrupt == f"{name}.layer{i}.b":
                db = db + 0.01
            params.extend([net.layers[i].W, net.layers[i].b])
            flats.extend([dW, db])

    def closure():
        parts, _ = mtl_step(model, x1, x2, y, masks=masks, compute_grads=False)
        return parts["total"]

    return max_rel_grad_error(params, flats, closure, eps)


def run_gradcheck(dims=(6, 5, 4), batch_size=3, eps=1e-5, seed=13, corrupt=None):
    """Per-check max relative gradient error; keys are check names.

    ``corrupt`` names a parameter (e.g. 'layer0.W' for the
    reconstruction nets, 'encoder.layer0.W' for the siamese checks)
    whose analytic gradient is deliberately damaged, for verifying that
    the harness catches failures.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ConfigError("need at least input and output dims")
    if any(d < 1 or d > MAX_DIM for d in dims):
        raise ConfigError(f"dims must stay within 1..{MAX_DIM}")
    if not 1 <= batch_size <= MAX_BATCH:
        raise ConfigError(f"batch size must stay within 1..{MAX_BATCH}")
    results = {}
    rng = np.random.default_rng(seed)
    recon_corrupt = corrupt if corrupt and corrupt.startswith("layer") else None
    mtl_corrupt = (corrupt if corrupt
                   and corrupt.split(".")[0] in ("encoder", "decoder", "tower")
                   else None)
    for kind in RECON_KINDS:
        results[f"recon:{kind}"] = _recon_check(kind, dims, batch_size, eps, rng,
                                                corrupt=recon_corrupt)
    results["softmax-rows:mse"] = _softmax_check(dims, batch_size, eps, rng)
    shared = max(3, dims[1] if len(dims) > 1 else 4)
    for sim_kind in SIM_KINDS:
        for distance_kind in DISTANCE_KINDS:
            results[f"sim:{sim_kind}:{distance_kind}"] = _mtl_check(
                sim_kind, distance_kind, dims[0], shared, batch_size, eps, seed,
                corrupt=mtl_corrupt)
    return results


def gradcheck_passed(results, threshold=THRESHOLD):
    return all(err < threshold for err in results.values())
