import numpy as np
import pytest

from metaemb.store import EmbeddingEnsemble, EmbeddingSource, Vocabulary


def make_tokens(n):
    return [f"w{i:03d}" for i in range(n)]


def make_ensemble(n_words, dims, seed=0, correlated=False, noise=0.05):
    """Aligned synthetic ensemble; with ``correlated`` every source is a
    noisy copy of the first (dims must then match)."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(make_tokens(n_words))
    sources = []
    base = rng.normal(size=(n_words, dims[0]))
    for i, d in enumerate(dims):
        if correlated:
            assert d == dims[0]
            rows = base + noise * rng.normal(size=(n_words, d)) if i else base.copy()
        else:
            rows = rng.normal(size=(n_words, d))
        sources.append(EmbeddingSource(name=f"src{i}", vocab=vocab, rows=rows))
    return EmbeddingEnsemble(sources)


@pytest.fixture
def small_ensemble():
    return make_ensemble(40, [6, 4], seed=3)
