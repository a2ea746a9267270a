"""Autoencoded meta-embeddings.

Two architectures over the normalized ensemble: a coupled autoencoder
that maps the full concatenation through one shared code, and a
decoupled variant with one encoder/decoder pair per source whose codes
are concatenated and additionally pulled together by a pairwise
discrepancy penalty.  Either trains under any reconstruction loss; the
hidden code (dropout off, rows L2-normalized) is the meta-embedding.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .baselines import config_digest
from .errors import ConfigError, TrainingError, UnknownTokenError
from .losses import RECON_KINDS, recon_loss
from .net import EarlyStopper, FeedForwardNet, iter_minibatches, rng_streams, \
    split_train_val
from .store import MetaEmbedding, concat_rows, l2_normalize_rows

logger = logging.getLogger(__name__)


@dataclass
class AemeModel:
    architecture: str          # "coupled" | "decoupled"
    nets: list                 # one [in, code, in] net per branch
    hidden_dim: int            # total code width across branches
    loss: str
    code_widths: list


def code_widths(total, n_branches):
    """Split a total code width over branches; remainder goes first."""
    base = total // n_branches
    if base < 1:
        raise ConfigError(f"hidden width {total} too small for {n_branches} branches")
    widths = [base] * n_branches
    widths[0] += total - base * n_branches
    return widths


def _check_kind(kind):
    if kind not in RECON_KINDS:
        raise ConfigError(f"unknown reconstruction loss {kind!r}; use one of {RECON_KINDS}")


def _epoch_tally(kind, loss_value, m):
    """Convert one batch loss into a row-summed contribution."""
    return loss_value * m if kind in ("mse", "mae", "kl") else loss_value


def train_caeme(ensemble, kind, config):
    """Train the coupled autoencoder; returns (meta, model, history).

    The encoder is a single tanh layer with dropout on its output, the
    decoder a linear layer back to the concatenation (raw scores; the
    KL loss softmaxes internally).  Early stopping watches a held-out
    split of the vocabulary and the best-epoch parameters are restored.
    """
    _check_kind(kind)
    norm = ensemble.normalized()
    x = concat_rows(norm)
    hidden = config.hidden_dims[0]
    init_rng, shuffle_rng, dropout_rng, split_rng = rng_streams(config.seed, 4)
    net = FeedForwardNet.init(
        [x.shape[1], hidden, x.shape[1]], ["tanh", "identity"],
        dropout_p=config.dropout_p, mean=config.init_mean, std=config.init_std,
        seed=int(init_rng.integers(2**63)))
    history = _fit_autoencoder(net, x, x, kind, config, shuffle_rng, dropout_rng,
                               split_rng, label="caeme")
    codes = net.forward(x, train_mode=False).acts[0]
    tag = f"caeme[loss={kind},h={hidden},cfg={config_digest(config)}]"
    meta = MetaEmbedding(matrix=l2_normalize_rows(codes), vocab=ensemble.vocab,
                         method=tag, flagged_rows=norm.flagged_any())
    model = AemeModel(architecture="coupled", nets=[net], hidden_dim=hidden,
                      loss=kind, code_widths=[hidden])
    return meta, model, history


def _fit_autoencoder(net, inputs, targets, kind, config, shuffle_rng, dropout_rng,
                     split_rng, label):
    """Generic input->target fit with early stopping; returns history."""
    n = inputs.shape[0]
    train_idx, val_idx = split_train_val(n, split_rng, config.val_fraction)
    stopper = EarlyStopper(config.early_stop_patience)
    history = []
    for epoch in range(config.epochs):
        total = 0.0
        for batch in iter_minibatches(train_idx, config.batch_size, shuffle_rng):
            cache = net.forward(inputs[batch], train_mode=True, rng=dropout_rng)
            value, grad = recon_loss(kind, cache.output, targets[batch])
            if not np.isfinite(value):
                raise TrainingError(f"{label}: non-finite {kind} loss at epoch {epoch}")
            grads, _ = net.backward(cache, grad)
            net.sgd_step(grads, config.learning_rate)
            total += _epoch_tally(kind, value, len(batch))
        train_loss = total / len(train_idx)
        if len(val_idx):
            cache = net.forward(inputs[val_idx], train_mode=False)
            vvalue, _ = recon_loss(kind, cache.output, targets[val_idx])
            val_loss = _epoch_tally(kind, vvalue, len(val_idx)) / len(val_idx)
        else:
            val_loss = train_loss
        history.append({"epoch": epoch, "train": train_loss, "val": val_loss})
        if stopper.update(val_loss, net.snapshot):
            logger.info("%s: early stop at epoch %d (best val %.6g)",
                        label, epoch, stopper.best)
            break
    if stopper.best_state is not None:
        net.restore(stopper.best_state)
    return history


def train_daeme(ensemble, kind, config, pair_weight=1.0):
    """Train the decoupled autoencoder; returns (meta, model, history).

    Each source gets its own encoder/decoder; the per-source codes are
    concatenated into the meta-embedding.  On top of the per-source
    reconstruction losses, the mean squared distance between codes
    (over source pairs, zero-padded to the widest code) is penalized
    with ``pair_weight``.
    """
    _check_kind(kind)
    if pair_weight < 0:
        raise ConfigError("pair_weight must be >= 0")
    norm = ensemble.normalized()
    blocks = [src.rows for src in norm.sources]
    n_branches = len(blocks)
    n = blocks[0].shape[0]
    hidden = config.hidden_dims[0]
    widths = code_widths(hidden, n_branches)
    w_max = max(widths)
    n_pairs = n_branches * (n_branches - 1) // 2
    init_rng, shuffle_rng, dropout_rng, split_rng = rng_streams(config.seed, 4)
    nets = [FeedForwardNet.init([blk.shape[1], w, blk.shape[1]],
                                ["tanh", "identity"], dropout_p=config.dropout_p,
                                mean=config.init_mean, std=config.init_std,
                                seed=int(init_rng.integers(2**63)))
            for blk, w in zip(blocks, widths)]

    def padded(code, width):
        if width == w_max:
            return code
        out = np.zeros((code.shape[0], w_max))
        out[:, :width] = code
        return out

    def eval_total(rows_idx):
        recon = 0.0
        codes = []
        for net, blk, w in zip(nets, blocks, widths):
            cache = net.forward(blk[rows_idx], train_mode=False)
            v, _ = recon_loss(kind, cache.output, blk[rows_idx])
            recon += _epoch_tally(kind, v, len(rows_idx)) / len(rows_idx)
            codes.append(padded(cache.outs[0], w))
        disc = 0.0
        if n_pairs:
            for i in range(n_branches):
                for j in range(i + 1, n_branches):
                    diff = codes[i] - codes[j]
                    disc += float((diff * diff).sum())
            disc /= n_pairs * len(rows_idx)
        return recon + pair_weight * disc

    train_idx, val_idx = split_train_val(n, split_rng, config.val_fraction)
    stopper = EarlyStopper(config.early_stop_patience)
    history = []

    def snapshot_all():
        return [net.snapshot() for net in nets]

    for epoch in range(config.epochs):
        total = 0.0
        for batch in iter_minibatches(train_idx, config.batch_size, shuffle_rng):
            m = len(batch)
            caches = [net.forward(blk[batch], train_mode=True, rng=dropout_rng)
                      for net, blk in zip(nets, blocks)]
            codes = [padded(c.outs[0], w) for c, w in zip(caches, widths)]
            batch_loss = 0.0
            recon_grads = []
            for cache, blk in zip(caches, blocks):
                v, g = recon_loss(kind, cache.output, blk[batch])
                batch_loss += _epoch_tally(kind, v, m)
                recon_grads.append(g)
            disc_grads = [np.zeros_like(c) for c in codes]
            if n_pairs and pair_weight > 0.0:
                disc = 0.0
                coef = pair_weight * 2.0 / (n_pairs * m)
                for i in range(n_branches):
                    for j in range(i + 1, n_branches):
                        diff = codes[i] - codes[j]
                        disc += float((diff * diff).sum())
                        disc_grads[i] += coef * diff
                        disc_grads[j] -= coef * diff
                batch_loss += pair_weight * disc / n_pairs
            if not np.isfinite(batch_loss):
                raise TrainingError(f"daeme: non-finite loss at epoch {epoch}")
            for net, cache, g, dg, w in zip(nets, caches, recon_grads,
                                            disc_grads, widths):
                grads, _ = net.backward(cache, g,
                                        extra_output_grads={0: dg[:, :w]})
                net.sgd_step(grads, config.learning_rate)
            total += batch_loss
        train_loss = total / len(train_idx)
        val_loss = eval_total(val_idx) if len(val_idx) else train_loss
        history.append({"epoch": epoch, "train": train_loss, "val": val_loss})
        if stopper.update(val_loss, snapshot_all):
            logger.info("daeme: early stop at epoch %d (best val %.6g)",
                        epoch, stopper.best)
            break
    if stopper.best_state is not None:
        for net, state in zip(nets, stopper.best_state):
            net.restore(state)

    codes = np.concatenate(
        [net.forward(blk, train_mode=False).acts[0]
         for net, blk in zip(nets, blocks)], axis=1)
    tag = (f"daeme[loss={kind},h={hidden},pair={pair_weight},"
           f"cfg={config_digest(config)}]")
    meta = MetaEmbedding(matrix=l2_normalize_rows(codes), vocab=ensemble.vocab,
                         method=tag, flagged_rows=norm.flagged_any())
    model = AemeModel(architecture="decoupled", nets=nets, hidden_dim=hidden,
                      loss=kind, code_widths=widths)
    return meta, model, history


def branch_codes(model, ensemble, words=None):
    """Per-branch hidden codes, dropout off (decoupled models)."""
    if model.architecture != "decoupled":
        raise ConfigError("branch_codes applies to decoupled models only")
    norm = ensemble.normalized()
    idx = (np.arange(len(ensemble.vocab)) if words is None
           else np.array([ensemble.vocab.index(w) for w in words]))
    return [net.forward(src.rows[idx], train_mode=False).acts[0]
            for net, src in zip(model.nets, norm.sources)]


def encode(model, ensemble, words):
    """Meta-embedding rows for the given tokens (deterministic, dropout
    off, rows L2-normalized).  Unknown tokens raise."""
    for w in words:
        if w not in ensemble.vocab:
            raise UnknownTokenError(w)
    idx = np.array([ensemble.vocab.index(w) for w in words], dtype=int)
    norm = ensemble.normalized()
    if model.architecture == "coupled":
        rows = concat_rows(norm)[idx]
        codes = model.nets[0].forward(rows, train_mode=False).acts[0]
    else:
        codes = np.concatenate(
            [net.forward(src.rows[idx], train_mode=False).acts[0]
             for net, src in zip(model.nets, norm.sources)], axis=1)
    return l2_normalize_rows(codes)


def reconstruct(model, ensemble):
    """(inputs, reconstructions) over the whole vocabulary, dropout off."""
    norm = ensemble.normalized()
    if model.architecture == "coupled":
        x = concat_rows(norm)
        return x, model.nets[0].forward(x, train_mode=False).output
    blocks = [src.rows for src in norm.sources]
    outs = [net.forward(blk, train_mode=False).output
            for net, blk in zip(model.nets, blocks)]
    return np.concatenate(blocks, axis=1), np.concatenate(outs, axis=1)
