"""Semi-supervised multi-task similarity learner.

A siamese tower over the concatenated ensemble predicts word-pair
similarity as yhat = exp(-distance); the tower's first hidden layer is
shared with an autoencoder head whose reconstruction loss regularizes
it.  The shared layer, not yhat, is exported as the meta-embedding.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .baselines import config_digest
from .errors import (ConfigError, DataError, LossError, ParseError,
                     ProtocolError, TrainingError)
from .losses import RECON_KINDS, recon_loss
from .net import (EarlyStopper, FeedForwardNet, dropout_mask, iter_minibatches,
                  rng_streams, split_train_val)
from .store import MetaEmbedding, concat_rows, l2_normalize_rows

logger = logging.getLogger(__name__)

DISTANCE_KINDS = ("manhattan", "euclidean", "cosine", "asymmetric-cosine")
SIM_KINDS = ("nll", "ols", "brier")
TOWER_DIMS = (50, 10)
_LOG_EPS = 1e-12


# ---------------------------------------------------------------------------
# word-pair datasets
# ---------------------------------------------------------------------------

def normalize_scores(raw, lo, hi):
    """Affine map of raw annotation scores onto [0, 1] (rank-preserving)."""
    if not hi > lo:
        raise DataError(f"cannot normalize scores: max ({hi}) must exceed min ({lo})")
    return (np.asarray(raw, dtype=np.float64) - lo) / (hi - lo)


@dataclass
class WordPairDataset:
    """Scored word pairs with their [0,1]-normalized targets."""

    name: str
    w1: list
    w2: list
    raw: np.ndarray
    y: np.ndarray
    normalization: tuple
    range_inferred: bool = False

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if not (len(self.w1) == len(self.w2) == len(self.raw) == len(self.y)):
            raise ConfigError("word-pair dataset columns must align")
        if len(self.y) and (self.y.min() < 0.0 or self.y.max() > 1.0):
            raise DataError(f"dataset {self.name}: normalized scores leave [0, 1]")

    def __len__(self):
        return len(self.raw)

    def subset(self, indices, suffix=None):
        idx = list(indices)
        return WordPairDataset(
            name=self.name if suffix is None else f"{self.name}:{suffix}",
            w1=[self.w1[i] for i in idx], w2=[self.w2[i] for i in idx],
            raw=self.raw[idx], y=self.y[idx],
            normalization=self.normalization,
            range_inferred=self.range_inferred)

    def pair_keys(self):
        """Unordered token pairs, for leakage checks."""
        return {frozenset((a, b)) for a, b in zip(self.w1, self.w2)}


def load_word_pairs(path, name=None, score_range=None):
    """Parse a 'word1 SEP word2 SEP score' file (tab or comma separated).

    Lines starting with '#' are ignored.  When ``score_range`` is not
    given the (min, max) are inferred from the data and flagged.
    """
    name = name or str(path)
    w1, w2, raw = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            sep = "\t" if "\t" in line else ","
            parts = [p.strip() for p in stripped.split(sep)]
            if len(parts) != 3:
                raise ParseError(path, line_no,
                                 f"expected 'word1{sep!r}word2{sep!r}score'")
            try:
                score = float(parts[2])
            except ValueError:
                raise ParseError(path, line_no,
                                 f"non-numeric score {parts[2]!r}") from None
            w1.append(parts[0])
            w2.append(parts[1])
            raw.append(score)
    if not raw:
        raise DataError(f"{path}: no word pairs found")
    raw = np.asarray(raw, dtype=np.float64)
    inferred = score_range is None
    lo, hi = (float(raw.min()), float(raw.max())) if inferred else score_range
    return WordPairDataset(name=name, w1=w1, w2=w2, raw=raw,
                           y=normalize_scores(raw, lo, hi),
                           normalization=(lo, hi), range_inferred=inferred)


def resolve_pairs(dataset, vocab):
    """Keep only pairs whose both tokens are in the vocabulary.

    Returns (resolved dataset, dropped count); the drop count is also
    logged so reports can surface it.
    """
    keep = [i for i in range(len(dataset))
            if dataset.w1[i] in vocab and dataset.w2[i] in vocab]
    dropped = len(dataset) - len(keep)
    if dropped:
        logger.info("dataset %s: dropped %d/%d pairs not in vocabulary",
                    dataset.name, dropped, len(dataset))
    return dataset.subset(keep), dropped


# ---------------------------------------------------------------------------
# pairwise distances
# ---------------------------------------------------------------------------

def _distances(kind, t1, t2):
    """Raw distances for a batch plus the clamp mask for the exp path.

    asymmetric-cosine may go negative; it is clamped at 0 before the
    negative exponent (mask 0 marks clamped rows).  The raw value is
    what the linear-readout loss consumes.
    """
    if kind == "manhattan":
        d = np.abs(t1 - t2).sum(axis=1)
        return d, np.ones_like(d)
    if kind == "euclidean":
        d = np.sqrt(((t1 - t2) ** 2).sum(axis=1))
        return d, np.ones_like(d)
    if kind == "cosine":
        n1 = np.linalg.norm(t1, axis=1)
        n2 = np.linalg.norm(t2, axis=1)
        if (n1 == 0).any() or (n2 == 0).any():
            raise LossError("cosine distance undefined on zero-norm vectors")
        d = 1.0 - (t1 * t2).sum(axis=1) / (n1 * n2)
        return d, np.ones_like(d)
    if kind == "asymmetric-cosine":
        n1sq = (t1 * t1).sum(axis=1)
        if (n1sq == 0).any():
            raise LossError("asymmetric cosine undefined on zero-norm first vector")
        d = 1.0 - (t1 * t2).sum(axis=1) / n1sq
        return d, (d > 0.0).astype(np.float64)
    raise ConfigError(f"unknown distance kind {kind!r}; use one of {DISTANCE_KINDS}")


def _distance_backward(kind, t1, t2, gd):
    """Gradients w.r.t. t1, t2 given gradient ``gd`` w.r.t. raw distance."""
    gd = gd[:, None]
    if kind == "manhattan":
        g1 = gd * np.sign(t1 - t2)
        return g1, -g1
    if kind == "euclidean":
        diff = t1 - t2
        d = np.sqrt((diff * diff).sum(axis=1, keepdims=True))
        unit = np.where(d > 0.0, diff / np.where(d > 0.0, d, 1.0), 0.0)
        g1 = gd * unit
        return g1, -g1
    if kind == "cosine":
        n1 = np.linalg.norm(t1, axis=1, keepdims=True)
        n2 = np.linalg.norm(t2, axis=1, keepdims=True)
        dot = (t1 * t2).sum(axis=1, keepdims=True)
        c = dot / (n1 * n2)
        g1 = -gd * (t2 / (n1 * n2) - c * t1 / (n1 * n1))
        g2 = -gd * (t1 / (n1 * n2) - c * t2 / (n2 * n2))
        return g1, g2
    # asymmetric-cosine
    n1sq = (t1 * t1).sum(axis=1, keepdims=True)
    dot = (t1 * t2).sum(axis=1, keepdims=True)
    g1 = -gd * (t2 / n1sq - 2.0 * dot * t1 / (n1sq * n1sq))
    g2 = -gd * (t1 / n1sq)
    return g1, g2


def pair_distance(kind, h1, h2):
    """Distance between two vectors under the chosen kind.

    asymmetric-cosine is clamped below at 0 (so the exp head stays in
    (0, 1]); its unclamped value can be negative and differ by argument
    order.
    """
    h1 = np.atleast_2d(np.asarray(h1, dtype=np.float64))
    h2 = np.atleast_2d(np.asarray(h2, dtype=np.float64))
    if h1.shape != h2.shape:
        raise ConfigError("pair_distance arguments must share a shape")
    d_raw, _ = _distances(kind, h1, h2)
    d = np.maximum(d_raw, 0.0)
    return float(d[0]) if d.size == 1 else d


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class MtlModel:
    encoder: FeedForwardNet   # k -> shared width, tanh; dropout on its output
    decoder: FeedForwardNet   # shared -> k, identity
    tower: FeedForwardNet     # shared -> ... -> task code, tanh
    distance_kind: str
    dropout_p: float
    lambda_: float
    recon_kind: str = "mse"
    sim_kind: str = "brier"

    def nets(self):
        return {"encoder": self.encoder, "decoder": self.decoder,
                "tower": self.tower}


def build_mtl_model(in_dim, config, distance_kind="cosine", recon_kind="mse",
                    sim_kind="brier", tower_dims=TOWER_DIMS, seed=None):
    """Assemble the shared encoder, reconstruction head and task tower."""
    if distance_kind not in DISTANCE_KINDS:
        raise ConfigError(f"unknown distance kind {distance_kind!r}")
    if sim_kind not in SIM_KINDS:
        raise ConfigError(f"unknown similarity loss {sim_kind!r}")
    if recon_kind not in RECON_KINDS:
        raise ConfigError(f"unknown reconstruction loss {recon_kind!r}")
    shared = config.hidden_dims[0]
    rng = np.random.default_rng(config.seed if seed is None else seed)
    enc_seed, dec_seed, tow_seed = (int(rng.integers(2**63)) for _ in range(3))
    encoder = FeedForwardNet.init([in_dim, shared], ["tanh"],
                                  mean=config.init_mean, std=config.init_std,
                                  seed=enc_seed)
    decoder = FeedForwardNet.init([shared, in_dim], ["identity"],
                                  mean=config.init_mean, std=config.init_std,
                                  seed=dec_seed)
    tower = FeedForwardNet.init([shared, *tower_dims],
                                ["tanh"] * len(tower_dims),
                                mean=config.init_mean, std=config.init_std,
                                seed=tow_seed)
    return MtlModel(encoder=encoder, decoder=decoder, tower=tower,
                    distance_kind=distance_kind, dropout_p=config.dropout_p,
                    lambda_=config.lambda_, recon_kind=recon_kind,
                    sim_kind=sim_kind)


def similarity_forward(model, x1, x2):
    """Predicted similarity yhat = exp(-d) in (0, 1], dropout off."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    t1 = model.tower.forward(model.encoder.forward(x1).output).output
    t2 = model.tower.forward(model.encoder.forward(x2).output).output
    d_raw, _ = _distances(model.distance_kind, t1, t2)
    yhat = np.exp(-np.maximum(d_raw, 0.0))
    return float(yhat[0]) if yhat.size == 1 else yhat


def _sim_loss_grad(kind, y, d_raw, clamp_mask):
    """Supervised loss and its gradient w.r.t. the raw distance.

    nll and brier read the exp(-d) probability (clamped distance); the
    least-squares readout compares y against the raw distance itself.
    """
    m = y.shape[0]
    if kind == "ols":
        resid = y - d_raw
        return float((resid * resid).sum()) / m, -(2.0 / m) * resid
    d = np.where(clamp_mask > 0.0, d_raw, 0.0)
    yhat = np.exp(-d)
    if kind == "brier":
        resid = y - yhat
        loss = float((resid * resid).sum()) / m
        gd = (2.0 / m) * resid * yhat          # d yhat / d d = -yhat
        return loss, gd * clamp_mask
    if kind == "nll":
        a = np.maximum(yhat, _LOG_EPS)
        b = np.maximum(1.0 - yhat, _LOG_EPS)
        loss = -float((y * np.log(a) + (1.0 - y) * np.log(b)).sum()) / m
        dl_dyhat = -(y / a - np.where(1.0 - yhat > _LOG_EPS, (1.0 - y) / b, 0.0)) / m
        return loss, dl_dyhat * (-yhat) * clamp_mask
    raise ConfigError(f"unknown similarity loss {kind!r}; use one of {SIM_KINDS}")


def mtl_step(model, x1, x2, y, masks=None, compute_grads=True):
    """One forward(/backward) pass over a batch of pairs.

    ``masks`` are the two inverted-dropout masks on the shared layer
    (None for evaluation).  Returns (parts, grads) where parts carries
    total / sim / recon_raw (recon before the lambda weight) and grads
    maps net name -> per-layer (dW, db), or None when not requested.
    """
    m = x1.shape[0]
    enc_caches = [model.encoder.forward(x1), model.encoder.forward(x2)]
    h = [c.output for c in enc_caches]
    if masks is not None:
        hd = [h[0] * masks[0], h[1] * masks[1]]
    else:
        hd = h
    tow_caches = [model.tower.forward(hd[0]), model.tower.forward(hd[1])]
    t1, t2 = tow_caches[0].output, tow_caches[1].output
    d_raw, clamp_mask = _distances(model.distance_kind, t1, t2)
    sim_loss, gd = _sim_loss_grad(model.sim_kind, y, d_raw, clamp_mask)

    dec_caches = [model.decoder.forward(hd[0]), model.decoder.forward(hd[1])]
    xhat = np.concatenate([dec_caches[0].output, dec_caches[1].output], axis=0)
    xtgt = np.concatenate([x1, x2], axis=0)
    recon_raw, recon_grad = recon_loss(model.recon_kind, xhat, xtgt)

    parts = {"total": sim_loss + model.lambda_ * recon_raw,
             "sim": sim_loss, "recon_raw": recon_raw}
    if not compute_grads:
        return parts, None

    g_t = _distance_backward(model.distance_kind, t1, t2, gd)
    tower_grads = None
    enc_out_grads = [None, None]
    for b in range(2):
        tg, ghd = model.tower.backward(tow_caches[b], g_t[b])
        tower_grads = tg if tower_grads is None else _add_grads(tower_grads, tg)
        enc_out_grads[b] = ghd
    decoder_grads = None
    if model.lambda_ > 0.0:
        for b in range(2):
            gslice = model.lambda_ * recon_grad[b * m:(b + 1) * m]
            dg, ghd = model.decoder.backward(dec_caches[b], gslice)
            decoder_grads = dg if decoder_grads is None else _add_grads(decoder_grads, dg)
            enc_out_grads[b] = enc_out_grads[b] + ghd
    encoder_grads = None
    for b in range(2):
        g = enc_out_grads[b]
        if masks is not None:
            g = g * masks[b]
        eg, _ = model.encoder.backward(enc_caches[b], g)
        encoder_grads = eg if encoder_grads is None else _add_grads(encoder_grads, eg)
    grads = {"encoder": encoder_grads, "tower": tower_grads}
    if decoder_grads is not None:
        grads["decoder"] = decoder_grads
    return parts, grads


def _add_grads(a, b):
    return [(ga[0] + gb[0], ga[1] + gb[1]) for ga, gb in zip(a, b)]


def mtl_loss(model, x1, x2, y):
    """Total loss (sim + lambda * reconstruction) on a batch, dropout off."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    parts, _ = mtl_step(model, x1, x2, y, masks=None, compute_grads=False)
    return parts


def _per_row(kind, value, rows):
    """Normalize a loss value to per-row scale for epoch bookkeeping."""
    return value if kind in ("mse", "mae", "kl") else value / rows


def reconstruction_loss(model, ensemble, word_indices=None):
    """Current raw reconstruction loss over words, dropout off."""
    x = concat_rows(ensemble.normalized())
    if word_indices is not None:
        x = x[word_indices]
    h = model.encoder.forward(x).output
    xhat = model.decoder.forward(h).output
    value, _ = recon_loss(model.recon_kind, xhat, x)
    return _per_row(model.recon_kind, value, x.shape[0])


def shared_layer_meta(model, ensemble, held_out_name=None):
    """Shared-layer representation of every word as a MetaEmbedding."""
    norm = ensemble.normalized()
    h = model.encoder.forward(concat_rows(norm)).output
    held = f",held={held_out_name}" if held_out_name else ""
    tag = (f"mtl[recon={model.recon_kind},sim={model.sim_kind},"
           f"dist={model.distance_kind},lambda={model.lambda_}{held}]")
    return MetaEmbedding(matrix=l2_normalize_rows(h), vocab=ensemble.vocab,
                         method=tag, flagged_rows=norm.flagged_any())


def train_mtl(train_sets, held_out, ensemble, config, recon_kind="mse",
              sim_kind="brier", distance_kind="cosine", tower_dims=TOWER_DIMS):
    """Joint SGD on similarity + reconstruction; returns (model, meta, history).

    Supervision comes only from ``train_sets``; the held-out dataset
    contributes its word vectors to reconstruction-only batches (its
    pairs never touch the supervised loss, and any unordered pair
    shared with a training set is a protocol error).  Early stopping
    watches a 10% split of the training pairs.
    """
    if held_out is None:
        raise ConfigError("train_mtl needs a held-out dataset")
    vocab = ensemble.vocab
    resolved = []
    for ds in train_sets:
        r, _ = resolve_pairs(ds, vocab)
        if len(r):
            resolved.append(r)
    if not resolved:
        raise DataError("no training pairs survive vocabulary resolution")
    held_res, _ = resolve_pairs(held_out, vocab)
    held_keys = held_res.pair_keys()
    for ds in resolved:
        leaked = ds.pair_keys() & held_keys
        if leaked:
            example = sorted(tuple(sorted(p)) for p in leaked)[0]
            raise ProtocolError(
                f"{len(leaked)} held-out pair(s) leaked into training set "
                f"{ds.name} (e.g. {example})")

    x = concat_rows(ensemble.normalized())
    i1 = np.array([vocab.index(w) for ds in resolved for w in ds.w1])
    i2 = np.array([vocab.index(w) for ds in resolved for w in ds.w2])
    y = np.concatenate([ds.y for ds in resolved])
    held_words = sorted({w for ws in (held_res.w1, held_res.w2) for w in ws})
    held_idx = np.array([vocab.index(w) for w in held_words], dtype=int)

    init_rng, shuffle_rng, dropout_rng, split_rng = rng_streams(config.seed, 4)
    model = build_mtl_model(x.shape[1], config, distance_kind=distance_kind,
                            recon_kind=recon_kind, sim_kind=sim_kind,
                            tower_dims=tower_dims,
                            seed=int(init_rng.integers(2**63)))
    n_pairs = len(y)
    train_idx, val_idx = split_train_val(n_pairs, split_rng, config.val_fraction)
    stopper = EarlyStopper(config.early_stop_patience)
    shared = model.encoder.out_dim

    def snapshot_all():
        return {name: net.snapshot() for name, net in model.nets().items()}

    def val_total():
        if not len(val_idx):
            return None
        parts, _ = mtl_step(model, x[i1[val_idx]], x[i2[val_idx]], y[val_idx],
                            masks=None, compute_grads=False)
        return parts["total"]

    history = []
    for epoch in range(config.epochs):
        sim_total = 0.0
        recon_total = 0.0
        rows_seen = 0
        for batch in iter_minibatches(train_idx, config.batch_size, shuffle_rng):
            m = len(batch)
            masks = None
            if config.dropout_p > 0.0:
                masks = (dropout_mask(dropout_rng, (m, shared), config.dropout_p),
                         dropout_mask(dropout_rng, (m, shared), config.dropout_p))
            parts, grads = mtl_step(model, x[i1[batch]], x[i2[batch]], y[batch],
                                    masks=masks)
            if not np.isfinite(parts["total"]):
                raise TrainingError(f"mtl: non-finite loss at epoch {epoch}")
            for name, g in grads.items():
                model.nets()[name].sgd_step(g, config.learning_rate)
            sim_total += parts["sim"] * m
            recon_total += _per_row(recon_kind, parts["recon_raw"], 2 * m) * m
            rows_seen += m
        # reconstruction-only passes over the held-out dataset's words
        if len(held_idx) and model.lambda_ > 0.0:
            for batch in iter_minibatches(held_idx, config.batch_size, shuffle_rng):
                xb = x[batch]
                mask = (dropout_mask(dropout_rng, (len(batch), shared),
                                     config.dropout_p)
                        if config.dropout_p > 0.0 else None)
                enc_cache = model.encoder.forward(xb)
                hd = enc_cache.output if mask is None else enc_cache.output * mask
                dec_cache = model.decoder.forward(hd)
                value, grad = recon_loss(recon_kind, dec_cache.output, xb)
                dec_grads, ghd = model.decoder.backward(dec_cache,
                                                        model.lambda_ * grad)
                if mask is not None:
                    ghd = ghd * mask
                enc_grads, _ = model.encoder.backward(enc_cache, ghd)
                model.decoder.sgd_step(dec_grads, config.learning_rate)
                model.encoder.sgd_step(enc_grads, config.learning_rate)
        record = {"epoch": epoch,
                  "sim": sim_total / rows_seen,
                  "recon_raw": recon_total / rows_seen}
        vt = val_total()
        record["val"] = vt if vt is not None else record["sim"]
        history.append(record)
        if stopper.update(record["val"], snapshot_all):
            logger.info("mtl: early stop at epoch %d (best val %.6g)",
                        epoch, stopper.best)
            break
    if stopper.best_state is not None:
        for name, state in stopper.best_state.items():
            model.nets()[name].restore(state)

    meta = shared_layer_meta(model, ensemble, held_out_name=held_out.name)
    meta.method = meta.method[:-1] + f",cfg={config_digest(config)}]"
    return model, meta, history
