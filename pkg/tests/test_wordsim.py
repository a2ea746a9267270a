import numpy as np
import pytest

from metaemb.errors import ConfigError, EvaluationError
from metaemb.mtl import WordPairDataset
from metaemb.store import MetaEmbedding, Vocabulary, l2_normalize_rows
from metaemb.wordsim import (eval_wordsim, format_report_table,
                             fractional_ranks, spearman, write_reports_csv)

from conftest import make_tokens


def rank_bruteforce(values):
    # independent O(n^2) fractional ranking
    n = len(values)
    out = np.empty(n)
    for i in range(n):
        less = sum(1 for j in range(n) if values[j] < values[i])
        equal = sum(1 for j in range(n) if values[j] == values[i])
        out[i] = less + (equal + 1) / 2.0
    return out


def pearson_explicit(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    am = a - a.mean()
    bm = b - b.mean()
    return float((am * bm).sum() / np.sqrt((am * am).sum() * (bm * bm).sum()))


def spearman_oracle(x, y):
    return pearson_explicit(rank_bruteforce(x), rank_bruteforce(y))


def test_identity_and_reversal():
    x = np.arange(10.0)
    assert spearman(x, x) == pytest.approx(1.0, abs=1e-15)
    assert spearman(x, -x) == pytest.approx(-1.0, abs=1e-15)


def test_hand_case():
    # ranks equal the values; sum of squared rank differences is 4,
    # so rho = 1 - 6*4/(5*24) = 0.8 (= Pearson of the ranks)
    x = [1, 2, 3, 4, 5]
    y = [2, 1, 4, 3, 5]
    assert spearman(x, y) == pytest.approx(0.8, abs=1e-12)
    assert spearman_oracle(x, y) == pytest.approx(0.8, abs=1e-12)


def test_fractional_ranks_with_ties():
    v = np.array([3.0, 1.0, 3.0, 2.0])
    assert np.allclose(fractional_ranks(v), [3.5, 1.0, 3.5, 2.0])
    assert np.allclose(fractional_ranks(v), rank_bruteforce(v))


def test_matches_bruteforce_oracle_with_ties():
    rng = np.random.default_rng(42)
    for _ in range(40):
        x = rng.normal(size=60)
        y = rng.normal(size=60)
        # duplicate a chunk of values to force ties
        x[45:] = x[rng.integers(0, 45, size=15)]
        y[45:] = y[rng.integers(0, 45, size=15)]
        assert spearman(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-12)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(7)
    x = rng.normal(size=50)
    y = rng.normal(size=50)
    base = spearman(x, y)
    assert spearman(np.exp(x), y) == pytest.approx(base, abs=1e-12)
    assert spearman(x, 3.0 * y + 10.0) == pytest.approx(base, abs=1e-12)


def test_symmetry():
    rng = np.random.default_rng(8)
    x = rng.normal(size=30)
    y = rng.normal(size=30)
    assert spearman(x, y) == pytest.approx(spearman(y, x), abs=1e-15)


def test_errors():
    with pytest.raises(EvaluationError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        spearman([1.0], [2.0])
    with pytest.raises(ConfigError):
        spearman([1.0, 2.0], [1.0, 2.0, 3.0])


def _planted_meta_and_dataset(n_words=30, dim=8, n_pairs=80, seed=5):
    rng = np.random.default_rng(seed)
    tokens = make_tokens(n_words)
    matrix = l2_normalize_rows(rng.normal(size=(n_words, dim)))
    meta = MetaEmbedding(matrix=matrix, vocab=Vocabulary(tokens), method="test")
    i1 = rng.integers(0, n_words, size=n_pairs)
    i2 = (i1 + 1 + rng.integers(0, n_words - 1, size=n_pairs)) % n_words
    cos = (matrix[i1] * matrix[i2]).sum(axis=1)
    y = (cos - cos.min()) / (cos.max() - cos.min())
    ds = WordPairDataset(name="planted", w1=[tokens[i] for i in i1],
                         w2=[tokens[i] for i in i2], raw=cos, y=y,
                         normalization=(float(cos.min()), float(cos.max())))
    return meta, ds


def test_eval_wordsim_planted_agreement():
    meta, ds = _planted_meta_and_dataset()
    report = eval_wordsim(meta, ds, "cosine")
    assert report.rho_s == pytest.approx(1.0, abs=1e-12)
    assert report.pairs_used == len(ds)
    assert report.pairs_dropped == 0


def test_eval_wordsim_measure_rank_invariance():
    # euclidean on unit vectors is a strictly monotone transform of cosine
    meta, ds = _planted_meta_and_dataset()
    r_cos = eval_wordsim(meta, ds, "cosine")
    r_euc = eval_wordsim(meta, ds, "euclidean")
    assert r_cos.rho_s == pytest.approx(r_euc.rho_s, abs=1e-12)


def test_eval_wordsim_drops_oov_and_flagged():
    meta, ds = _planted_meta_and_dataset()
    # one OOV pair
    ds2 = WordPairDataset(name=ds.name, w1=ds.w1 + ["missing"],
                          w2=ds.w2 + [ds.w2[0]],
                          raw=np.append(ds.raw, 0.5), y=np.append(ds.y, 0.5),
                          normalization=ds.normalization)
    flags = np.zeros(len(meta.vocab), dtype=bool)
    flags[meta.vocab.index(ds.w1[0])] = True
    meta.flagged_rows = flags
    report = eval_wordsim(meta, ds2, "cosine")
    assert report.pairs_used + report.pairs_dropped == len(ds2)
    assert report.pairs_dropped >= 2  # the OOV pair plus every flagged one


def test_eval_wordsim_all_dropped():
    meta, ds = _planted_meta_and_dataset()
    bad = WordPairDataset(name="bad", w1=["x1", "x2"], w2=["y1", "y2"],
                          raw=np.array([0.0, 1.0]), y=np.array([0.0, 1.0]),
                          normalization=(0.0, 1.0))
    with pytest.raises(EvaluationError):
        eval_wordsim(meta, bad, "cosine")


def test_report_outputs(tmp_path):
    meta, ds = _planted_meta_and_dataset()
    report = eval_wordsim(meta, ds, "cosine")
    csv_path = tmp_path / "r.csv"
    with open(csv_path, "w", newline="") as fh:
        write_reports_csv([report], fh)
    text = csv_path.read_text()
    assert text.splitlines()[0] == "dataset,method,measure,rho_s,pairs_used,pairs_dropped"
    table = format_report_table([report])
    assert "100.00" in table  # rho_s shown x100
