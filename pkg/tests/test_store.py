import logging

import numpy as np
import pytest

from metaemb.errors import (AlignmentError, ConfigError, FormatError,
                            ParseError, UnknownTokenError)
from metaemb.store import (EmbeddingEnsemble, EmbeddingSource, MetaEmbedding,
                           Vocabulary, align_vocabulary, concat_rows,
                           export_meta, load_ensemble, load_meta,
                           load_text_embeddings, normalize_l2, save_ensemble,
                           write_word2vec_text)

from conftest import make_ensemble


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_vocabulary_bijection():
    vocab = Vocabulary(["b", "a", "c"])
    assert len(vocab) == 3
    for i, tok in enumerate(vocab.tokens):
        assert vocab.index(tok) == i
    assert "a" in vocab and "z" not in vocab
    with pytest.raises(UnknownTokenError):
        vocab.index("z")
    with pytest.raises(ConfigError):
        Vocabulary(["a", "a"])


def test_load_glove_text(tmp_path):
    path = write_lines(tmp_path / "g.txt", [
        "cat 0.1 0.2",
        "dog -0.3 0.4",
        "eel 0.0 1.0",
    ])
    src = load_text_embeddings(path, "glove", name="g")
    assert len(src.vocab) == 3
    assert src.dim == 2
    assert np.allclose(src.rows[src.vocab.index("dog")], [-0.3, 0.4])


def test_load_word2vec_header(tmp_path):
    path = write_lines(tmp_path / "w.txt", [
        "2 3",
        "one 1 2 3",
        "two 4 5 6",
    ])
    src = load_text_embeddings(path, "word2vec")
    assert len(src.vocab) == 2 and src.dim == 3


def test_wrong_field_count_reports_line(tmp_path):
    path = write_lines(tmp_path / "w.txt", [
        "2 3",
        "one 1 2 3",
        "two 4 5",
    ])
    with pytest.raises(FormatError, match="3"):
        load_text_embeddings(path, "word2vec")
    path2 = write_lines(tmp_path / "g.txt", [
        "one 1 2 3",
        "two 4 5",
    ])
    with pytest.raises(FormatError, match=":2"):
        load_text_embeddings(path2, "glove")


def test_non_numeric_value_reports_line(tmp_path):
    path = write_lines(tmp_path / "g.txt", [
        "one 1 2",
        "two x 5",
    ])
    with pytest.raises(ParseError) as err:
        load_text_embeddings(path, "glove")
    assert err.value.line_no == 2


def test_duplicate_tokens_keep_first(tmp_path, caplog):
    path = write_lines(tmp_path / "g.txt", [
        "cat 1 0",
        "cat 9 9",
        "dog 0 1",
    ])
    with caplog.at_level(logging.WARNING):
        src = load_text_embeddings(path, "glove")
    assert len(src.vocab) == 2
    assert np.allclose(src.rows[src.vocab.index("cat")], [1, 0])
    assert any("duplicate" in r.message for r in caplog.records)


def test_align_intersection_and_union(tmp_path):
    a = write_lines(tmp_path / "a.txt", ["a 1 0", "b 0 1", "c 1 1"])
    b = write_lines(tmp_path / "b.txt", ["b 2 0 0", "c 0 2 0", "d 0 0 2"])
    sa = load_text_embeddings(a, "glove", name="A")
    sb = load_text_embeddings(b, "glove", name="B")

    inter = align_vocabulary([sa, sb], "intersection")
    assert inter.vocab.tokens == ("b", "c")
    assert inter.dims == [2, 3]
    assert not inter.flagged_any().any()

    union = align_vocabulary([sa, sb], "union-zero-fill")
    assert union.vocab.tokens == ("a", "b", "c", "d")
    flags = union.flagged_any()
    assert flags[union.vocab.index("a")] and flags[union.vocab.index("d")]
    assert int(flags.sum()) == 2
    # the zero-filled rows really are zero
    assert np.allclose(union.sources[1].rows[union.vocab.index("a")], 0.0)


def test_align_identical_vocabs(tmp_path):
    a = write_lines(tmp_path / "a.txt", ["x 1 0", "y 0 1"])
    b = write_lines(tmp_path / "b.txt", ["x 2 2", "y 3 3"])
    sa = load_text_embeddings(a, "glove")
    sb = load_text_embeddings(b, "glove")
    ens = align_vocabulary([sa, sb], "intersection")
    assert set(ens.vocab.tokens) == {"x", "y"}
    assert len(ens.vocab) == len(sa.vocab)


def test_align_empty_intersection(tmp_path):
    a = write_lines(tmp_path / "a.txt", ["x 1 0"])
    b = write_lines(tmp_path / "b.txt", ["y 2 2"])
    with pytest.raises(AlignmentError):
        align_vocabulary([load_text_embeddings(a, "glove"),
                          load_text_embeddings(b, "glove")], "intersection")


def test_normalize_l2():
    vocab = Vocabulary(["p", "q", "r"])
    src = EmbeddingSource(name="s", vocab=vocab,
                          rows=np.array([[3.0, 4.0], [0.6, 0.8], [0.0, 0.0]]))
    out = normalize_l2(src)
    assert np.allclose(out.rows[0], [0.6, 0.8])
    assert np.allclose(out.rows[1], [0.6, 0.8])
    assert np.allclose(out.rows[2], [0.0, 0.0])
    assert out.zero_rows[2] and not out.zero_rows[0]
    again = normalize_l2(out)
    assert np.array_equal(again.rows, out.rows)


def test_concat_rows_blocks_recoverable():
    ens = make_ensemble(10, [2, 3], seed=1)
    mat = concat_rows(ens)
    assert mat.shape == (10, 5)
    for src, sl in zip(ens.sources, ens.block_slices()):
        assert np.array_equal(mat[:, sl], src.rows)
    single = EmbeddingEnsemble([ens.sources[0]])
    assert np.array_equal(concat_rows(single), ens.sources[0].rows)


def test_word2vec_roundtrip_identical(tmp_path):
    ens = make_ensemble(5, [4], seed=2)
    src = ens.sources[0]
    path = tmp_path / "out.txt"
    write_word2vec_text(path, src.vocab.tokens, src.rows)
    back = load_text_embeddings(path, "word2vec")
    assert back.vocab.tokens == src.vocab.tokens
    assert back.rows.tobytes() == src.rows.tobytes()
    # serialize the reloaded source again: bytes identical
    path2 = tmp_path / "out2.txt"
    write_word2vec_text(path2, back.vocab.tokens, back.rows)
    assert path.read_bytes() == path2.read_bytes()


def test_meta_export_load_value_exact(tmp_path):
    rng = np.random.default_rng(3)
    vocab = Vocabulary(["aa", "bb", "cc"])
    meta = MetaEmbedding(matrix=rng.normal(size=(3, 6)) * 1e-7, vocab=vocab,
                         method="test")
    path = tmp_path / "meta.txt"
    export_meta(path, meta)
    back = load_meta(path, method="test")
    assert back.matrix.tobytes() == meta.matrix.tobytes()
    assert back.vocab.tokens == vocab.tokens


def test_ensemble_container_roundtrip(tmp_path):
    ens = make_ensemble(8, [3, 5], seed=4)
    path = tmp_path / "ens.npz"
    save_ensemble(path, ens)
    back = load_ensemble(path)
    assert back.vocab.tokens == ens.vocab.tokens
    assert back.dims == ens.dims
    for a, b in zip(back.sources, ens.sources):
        assert a.rows.tobytes() == b.rows.tobytes()
        assert np.array_equal(a.zero_rows, b.zero_rows)


def test_non_finite_rejected():
    vocab = Vocabulary(["a"])
    with pytest.raises(FormatError):
        EmbeddingSource(name="s", vocab=vocab, rows=np.array([[np.inf, 1.0]]))
