"""Combination methods that need no autoencoder: concatenation,
averaging, truncated SVD and the learned per-word projection (1TON).
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingError
from .net import iter_minibatches, rng_streams
from .store import MetaEmbedding, concat_rows

logger = logging.getLogger(__name__)


def config_digest(config):
    """Short stable digest of a TrainConfig for provenance tags."""
    blob = repr(sorted(vars(config).items())).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:8]


def meta_conc(ensemble):
    """Concatenate the L2-normalized sources; width is the sum of dims."""
    norm = ensemble.normalized()
    return MetaEmbedding(matrix=concat_rows(norm), vocab=ensemble.vocab,
                         method="conc[norm=l2]", flagged_rows=norm.flagged_any())


def meta_avg(ensemble):
    """Elementwise mean of the normalized sources, zero-padded to the
    widest source so nothing is truncated."""
    norm = ensemble.normalized()
    d_max = max(norm.dims)
    total = np.zeros((len(ensemble.vocab), d_max))
    for src in norm.sources:
        total[:, :src.dim] += src.rows
    total /= len(norm.sources)
    return MetaEmbedding(matrix=total, vocab=ensemble.vocab,
                         method="avg[norm=l2]", flagged_rows=norm.flagged_any())


def truncated_svd(matrix, k):
    """Top-k singular triples with a deterministic sign convention.

    The first nonzero entry of every right-singular vector is made
    positive (the matching left vector is flipped with it), so results
    are identical across runs and platforms.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if not 1 <= k <= min(matrix.shape):
        raise ConfigError(
            f"k={k} outside valid range 1..{min(matrix.shape)} for shape {matrix.shape}")
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    for j in range(vt.shape[0]):
        nz = np.flatnonzero(vt[j])
        if nz.size and vt[j, nz[0]] < 0:
            vt[j] = -vt[j]
            u[:, j] = -u[:, j]
    return u[:, :k], s[:k], vt[:k]


def meta_svd(ensemble, k_out):
    """Rank-k factorization of the normalized concatenation; rows are
    the left singular vectors scaled by their singular values."""
    norm = ensemble.normalized()
    u, s, _ = truncated_svd(concat_rows(norm), k_out)
    return MetaEmbedding(matrix=u * s, vocab=ensemble.vocab,
                         method=f"svd[k={k_out},norm=l2]",
                         flagged_rows=norm.flagged_any())


@dataclass
class OneToNModel:
    """Free meta vectors plus one linear map per source."""

    meta: np.ndarray
    projections: list


def _1ton_loss_grads(z, projections, blocks, compute_grads=True):
    """Squared-error loss (batch-mean of row SSE, summed over sources)."""
    m = z.shape[0]
    loss = 0.0
    dz = np.zeros_like(z) if compute_grads else None
    dps = [None] * len(projections) if compute_grads else None
    for i, (p, x) in enumerate(zip(projections, blocks)):
        resid = z @ p - x
        loss += float((resid * resid).sum()) / m
        if compute_grads:
            dz += (2.0 / m) * resid @ p.T
            dps[i] = (2.0 / m) * z.T @ resid
    return loss, dz, dps


def meta_1ton(ensemble, k_out, config, projections=None, meta_init=None,
              train_projections=True):
    """Learn one k_out-dim meta vector per word and a linear projection
    per source mapping meta -> source, by SGD on the total squared error.

    ``projections``/``meta_init`` override the seeded normal init (used
    by the least-squares cross-checks); with ``train_projections``
    False only the meta vectors move.  Returns (meta, model, history)
    where history holds the per-epoch loss.
    """
    if k_out < 1:
        raise ConfigError("k_out must be positive")
    norm = ensemble.normalized()
    blocks = [src.rows for src in norm.sources]
    n = len(ensemble.vocab)
    init_rng, shuffle_rng = rng_streams(config.seed, 2)
    if meta_init is not None:
        z = np.array(meta_init, dtype=np.float64)
        if z.shape != (n, k_out):
            raise ConfigError("meta_init shape does not match (|V|, k_out)")
    else:
        z = init_rng.normal(config.init_mean, config.init_std, size=(n, k_out))
    if projections is not None:
        ps = [np.array(p, dtype=np.float64) for p in projections]
        for p, src in zip(ps, norm.sources):
            if p.shape != (k_out, src.dim):
                raise ConfigError("projection shape does not match (k_out, dim)")
    else:
        ps = [init_rng.normal(config.init_mean, config.init_std,
                              size=(k_out, src.dim))
              for src in norm.sources]

    history = []
    all_idx = np.arange(n)
    for epoch in range(config.epochs):
        total = 0.0
        for batch in iter_minibatches(all_idx, config.batch_size, shuffle_rng):
            zb = z[batch]
            loss, dz, dps = _1ton_loss_grads(zb, ps, [blk[batch] for blk in blocks])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"1TON loss diverged at epoch {epoch}, first word index {batch[0]}")
            z[batch] = zb - config.learning_rate * dz
            if train_projections:
                for p, dp in zip(ps, dps):
                    p -= config.learning_rate * dp
            total += loss * len(batch)
        history.append(total / n)
    model = OneToNModel(meta=z, projections=ps)
    tag = f"1ton[k={k_out},cfg={config_digest(config)}]"
    meta = MetaEmbedding(matrix=z.copy(), vocab=ensemble.vocab, method=tag,
                         flagged_rows=norm.flagged_any())
    return meta, model, history
