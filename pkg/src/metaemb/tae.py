"""Target autoencoders: map the remaining sources onto one designated
target source and reuse the hidden code as a meta-embedding.

The mean variant trains one such mapping per target choice
(leave-one-out) and averages the hidden codes.
"""

from dataclasses import dataclass, replace

import numpy as np

from .aeme import _fit_autoencoder
from .baselines import config_digest
from .errors import ConfigError
from .net import FeedForwardNet, rng_streams
from .store import MetaEmbedding, l2_normalize_rows

N_STREAMS = 4  # init, shuffle, dropout, split


@dataclass
class TaeModel:
    target_index: int
    net: FeedForwardNet  # (k - d_t) -> d_t tanh -> d_t identity
    loss: str


def _split_blocks(ensemble, target_index):
    norm = ensemble.normalized()
    if len(norm.sources) < 2:
        raise ConfigError("target autoencoder needs at least 2 sources")
    if not 0 <= target_index < len(norm.sources):
        raise ConfigError(f"target_index {target_index} out of range")
    target = norm.sources[target_index].rows
    rest = [src.rows for i, src in enumerate(norm.sources) if i != target_index]
    return np.concatenate(rest, axis=1), target, norm


def train_tae(ensemble, target_index, kind, config):
    """Fit the remaining-sources -> target mapping; returns (model, history).

    The hidden layer is pinned to the target dimension so the code
    lives in the same-size space as the embedding it predicts.
    """
    inputs, target, _ = _split_blocks(ensemble, target_index)
    d_t = target.shape[1]
    init_rng, shuffle_rng, dropout_rng, split_rng = rng_streams(config.seed, N_STREAMS)
    net = FeedForwardNet.init(
        [inputs.shape[1], d_t, d_t], ["tanh", "identity"],
        dropout_p=config.dropout_p, mean=config.init_mean, std=config.init_std,
        seed=int(init_rng.integers(2**63)))
    history = _fit_autoencoder(net, inputs, target, kind, config, shuffle_rng,
                               dropout_rng, split_rng,
                               label=f"tae->source{target_index}")
    return TaeModel(target_index=target_index, net=net, loss=kind), history


def hidden_codes(model, ensemble):
    """Hidden-layer codes for every word, dropout off."""
    inputs, _, _ = _split_blocks(ensemble, model.target_index)
    return model.net.forward(inputs, train_mode=False).acts[0]


def predictions(model, ensemble):
    """(target block, predicted target block) over the vocabulary."""
    inputs, target, _ = _split_blocks(ensemble, model.target_index)
    return target, model.net.forward(inputs, train_mode=False).output


def tae_meta(model, ensemble, config=None):
    """Concatenate [hidden code, original target embedding] per word.

    The two blocks live on different scales, so each is L2-normalized
    before concatenation and the full row is normalized afterwards
    (noted in the method tag).  Width is twice the target dimension.
    """
    inputs, target, norm = _split_blocks(ensemble, model.target_index)
    codes = model.net.forward(inputs, train_mode=False).acts[0]
    combined = np.concatenate(
        [l2_normalize_rows(codes), l2_normalize_rows(target)], axis=1)
    name = norm.sources[model.target_index].name
    digest = f",cfg={config_digest(config)}" if config is not None else ""
    tag = f"tae[target={name},loss={model.loss},blocknorm=l2{digest}]"
    return MetaEmbedding(matrix=l2_normalize_rows(combined), vocab=ensemble.vocab,
                         method=tag, flagged_rows=norm.flagged_any())


def mte_meta(ensemble, kind, config, jobs=1):
    """Average the hidden codes of all leave-one-out target mappings.

    Every source takes a turn as the target (model i is seeded with
    seed + i); requires equal source dimensions so the codes share one
    space.  The leave-one-out fits are independent, so ``jobs`` > 1 runs
    them in threads; codes are reduced in target order either way.
    Returns (meta, models, histories).
    """
    dims = ensemble.dims
    if len(set(dims)) != 1:
        raise ConfigError(
            "mean target autoencoder needs equal source dims; pad or project "
            f"the ensemble first (got dims {dims})")

    def fit(i):
        return train_tae(ensemble, i, kind, replace(config, seed=config.seed + i))

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            fitted = list(pool.map(fit, range(len(dims))))
    else:
        fitted = [fit(i) for i in range(len(dims))]
    models = [m for m, _ in fitted]
    histories = [h for _, h in fitted]
    total = np.zeros((len(ensemble.vocab), dims[0]))
    for model in models:
        total += hidden_codes(model, ensemble)
    total /= len(dims)
    tag = f"mte[loss={kind},n={len(dims)},cfg={config_digest(config)}]"
    meta = MetaEmbedding(matrix=l2_normalize_rows(total), vocab=ensemble.vocab,
                         method=tag, flagged_rows=ensemble.flagged_any())
    return meta, models, histories
