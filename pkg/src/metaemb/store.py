"""Pre-trained embedding ingestion and the concatenated ensemble.

Parses word2vec/glove text files, aligns several sources onto one shared
vocabulary, L2-normalizes rows and assembles the row-wise concatenated
ensemble matrix that every combination method consumes.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (AlignmentError, ConfigError, FormatError, ParseError,
                     UnknownTokenError)

logger = logging.getLogger(__name__)

VOCAB_POLICIES = ("intersection", "union-zero-fill")
TEXT_FORMATS = ("word2vec", "glove")


class Vocabulary:
    """Ordered set of unique tokens with 0-based index lookup."""

    __slots__ = ("tokens", "_index")

    def __init__(self, tokens):
        self.tokens = tuple(tokens)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def index(self, token):
        try:
            return self._index[token]
        except KeyError:
            raise UnknownTokenError(token) from None

    def get(self, token, default=None):
        return self._index.get(token, default)


@dataclass
class EmbeddingSource:
    """One pre-trained embedding table aligned to a vocabulary.

    ``zero_rows`` flags rows that carry no real information (all-zero
    vectors, including rows synthesized by union-zero-fill alignment);
    evaluators use the flags to exclude fabricated vectors.
    """

    name: str
    vocab: Vocabulary
    rows: np.ndarray
    zero_rows: np.ndarray = field(default=None)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.vocab):
            raise ConfigError(
                f"source {self.name!r}: rows {self.rows.shape} do not match "
                f"vocabulary of size {len(self.vocab)}")
        if not np.isfinite(self.rows).all():
            raise FormatError(f"source {self.name!r} contains non-finite values")
        if self.zero_rows is None:
            self.zero_rows = ~self.rows.any(axis=1)
        else:
            self.zero_rows = np.asarray(self.zero_rows, dtype=bool)

    @property
    def dim(self):
        return self.rows.shape[1]


@dataclass
class EmbeddingEnsemble:
    """N sources sharing one vocabulary, concatenated column-blockwise."""

    sources: list

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("ensemble needs at least one source")
        vocab = self.sources[0].vocab
        for src in self.sources[1:]:
            if src.vocab is not vocab and src.vocab != vocab:
                raise ConfigError("ensemble sources must share one vocabulary")

    @property
    def vocab(self):
        return self.sources[0].vocab

    @property
    def dims(self):
        return [src.dim for src in self.sources]

    @property
    def total_dim(self):
        return sum(self.dims)

    def block_slices(self):
        """Column slice of each source inside the concatenated matrix."""
        out = []
        start = 0
        for d in self.dims:
            out.append(slice(start, start + d))
            start += d
        return out

    def flagged_any(self):
        """Per-word flag: True when any source row is zero/synthetic."""
        flags = np.zeros(len(self.vocab), dtype=bool)
        for src in self.sources:
            flags |= src.zero_rows
        return flags

    def normalized(self):
        return EmbeddingEnsemble([normalize_l2(src) for src in self.sources])


@dataclass
class MetaEmbedding:
    """A combined representation per word plus its provenance tag."""

    matrix: np.ndarray
    vocab: Vocabulary
    method: str
    flagged_rows: np.ndarray = field(default=None)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape[0] != len(self.vocab):
            raise ConfigError("meta-embedding row count does not match vocabulary")
        if not np.isfinite(self.matrix).all():
            raise ConfigError("meta-embedding contains non-finite values")

    @property
    def dim(self):
        return self.matrix.shape[1]

    def row(self, token):
        return self.matrix[self.vocab.index(token)]

    def rows_for(self, tokens):
        idx = [self.vocab.index(t) for t in tokens]
        return self.matrix[idx]


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------

def _parse_vector_line(path, line_no, line, expect_dim):
    parts = line.rstrip("\r\n").split(" ")
    # glove exports occasionally pad with a trailing space
    if parts and parts[-1] == "":
        parts.pop()
    if len(parts) < 2:
        raise ParseError(path, line_no, "expected 'token v1 ... vd'")
    token = parts[0]
    if expect_dim is not None and len(parts) - 1 != expect_dim:
        raise FormatError(
            f"{path}:{line_no}: expected {expect_dim} values, got {len(parts) - 1}")
    try:
        values = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise ParseError(path, line_no, f"non-numeric value ({exc})") from None
    return token, values


def load_text_embeddings(path, fmt, name=None):
    """Load a word2vec-text or glove-text embedding file.

    word2vec files start with a "count dim" header; glove files have no
    header and the dimension is inferred from the first row.  Duplicate
    tokens keep their first occurrence (a warning is logged).
    """
    if fmt not in TEXT_FORMATS:
        raise ConfigError(f"unknown embedding format {fmt!r}; use one of {TEXT_FORMATS}")
    name = name or str(path)
    tokens = []
    vectors = []
    seen = {}
    dup_count = 0
    expect_dim = None
    declared_count = None
    with open(path, "r", encoding="utf-8") as fh:
        line_no = 0
        if fmt == "word2vec":
            header = fh.readline()
            line_no += 1
            fields = header.split()
            if len(fields) != 2:
                raise ParseError(path, 1, "word2vec header must be 'count dim'")
            try:
                declared_count, expect_dim = int(fields[0]), int(fields[1])
            except ValueError:
                raise ParseError(path, 1, "word2vec header must be 'count dim'") from None
            if declared_count < 1 or expect_dim < 1:
                raise FormatError(f"{path}: header declares empty table")
        for line in fh:
            line_no += 1
            if not line.strip():
                continue
            token, values = _parse_vector_line(path, line_no, line, expect_dim)
            if expect_dim is None:
                expect_dim = len(values)
            if token in seen:
                dup_count += 1
                continue
            seen[token] = True
            tokens.append(token)
            vectors.append(values)
    if not tokens:
        raise FormatError(f"{path}: no embedding rows found")
    if dup_count:
        logger.warning("%s: %d duplicate token(s) dropped (first occurrence kept)",
                       path, dup_count)
    if declared_count is not None and declared_count != len(tokens) + dup_count:
        logger.warning("%s: header declares %d rows but %d were read",
                       path, declared_count, len(tokens) + dup_count)
    rows = np.array(vectors, dtype=np.float64)
    if not np.isfinite(rows).all():
        raise FormatError(f"{path}: non-finite embedding values")
    return EmbeddingSource(name=name, vocab=Vocabulary(tokens), rows=rows)


def write_word2vec_text(path, tokens, matrix):
    """Write a word2vec text file whose floats round-trip exactly.

    Values are rendered with repr(), the shortest decimal form that
    parses back to the identical double.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] != len(tokens):
        raise ConfigError("token count does not match matrix rows")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for token, row in zip(tokens, matrix):
            fh.write(token)
            for v in row:
                fh.write(" " + repr(float(v)))
            fh.write("\n")


def export_meta(path, meta):
    """Export a meta-embedding as word2vec text (round-trip exact)."""
    write_word2vec_text(path, meta.vocab.tokens, meta.matrix)


def load_meta(path, method="file"):
    """Load a previously exported meta-embedding from word2vec text."""
    src = load_text_embeddings(path, "word2vec", name=method)
    return MetaEmbedding(matrix=src.rows, vocab=src.vocab, method=method,
                         flagged_rows=src.zero_rows.copy())


# ---------------------------------------------------------------------------
# alignment / normalization / concatenation
# ---------------------------------------------------------------------------

def align_vocabulary(raw_sources, policy="intersection"):
    """Align sources onto one shared, lexicographically ordered vocabulary.

    intersection keeps tokens present in every source; union-zero-fill
    keeps all tokens and fills missing rows with zeros, flagging them so
    downstream evaluation can exclude fabricated vectors.
    """
    if policy not in VOCAB_POLICIES:
        raise ConfigError(f"unknown vocab policy {policy!r}; use one of {VOCAB_POLICIES}")
    if len(raw_sources) < 2:
        raise ConfigError("alignment needs at least 2 sources")
    token_sets = [set(src.vocab.tokens) for src in raw_sources]
    if policy == "intersection":
        shared = set.intersection(*token_sets)
        if not shared:
            raise AlignmentError("vocabulary intersection is empty")
    else:
        shared = set.union(*token_sets)
    ordered = sorted(shared)
    vocab = Vocabulary(ordered)
    aligned = []
    for src in raw_sources:
        rows = np.zeros((len(ordered), src.dim), dtype=np.float64)
        zero_rows = np.ones(len(ordered), dtype=bool)
        for i, tok in enumerate(ordered):
            j = src.vocab.get(tok)
            if j is not None:
                rows[i] = src.rows[j]
                zero_rows[i] = bool(src.zero_rows[j])
        filled = int(zero_rows.sum())
        if filled and policy == "union-zero-fill":
            logger.info("source %s: %d row(s) zero-filled by union alignment",
                        src.name, filled)
        aligned.append(EmbeddingSource(name=src.name, vocab=vocab, rows=rows,
                                       zero_rows=zero_rows))
    return EmbeddingEnsemble(aligned)


def l2_normalize_rows(matrix):
    """Unit-norm copy of a matrix; all-zero rows are left untouched."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    out = matrix.copy()
    nz = norms > 0.0
    out[nz] = out[nz] / norms[nz, None]
    return out


def normalize_l2(source):
    """Scale each nonzero row to unit Euclidean norm (idempotent)."""
    norms = np.linalg.norm(source.rows, axis=1)
    zero = norms == 0.0
    scaled = source.rows.copy()
    nz = ~zero
    scaled[nz] = scaled[nz] / norms[nz, None]
    return EmbeddingSource(name=source.name, vocab=source.vocab, rows=scaled,
                           zero_rows=source.zero_rows | zero)


def concat_rows(ensemble):
    """Concatenated |V| x k matrix; column blocks follow source order."""
    return np.concatenate([src.rows for src in ensemble.sources], axis=1)


# ---------------------------------------------------------------------------
# aligned-ensemble container (used by the ingest cache)
# ---------------------------------------------------------------------------

ENSEMBLE_VERSION = 1


def save_ensemble(path, ensemble):
    header = {
        "version": ENSEMBLE_VERSION,
        "names": [src.name for src in ensemble.sources],
        "dims": ensemble.dims,
    }
    arrays = {
        "__header__": np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8),
        "tokens": np.array(ensemble.vocab.tokens, dtype=np.str_),
    }
    for i, src in enumerate(ensemble.sources):
        arrays[f"rows_{i}"] = src.rows
        arrays[f"zero_{i}"] = src.zero_rows
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_ensemble(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        if header.get("version") != ENSEMBLE_VERSION:
            raise FormatError(f"{path}: unsupported ensemble container version")
        vocab = Vocabulary(str(t) for t in data["tokens"])
        sources = []
        for i, name in enumerate(header["names"]):
            sources.append(EmbeddingSource(
                name=name, vocab=vocab, rows=data[f"rows_{i}"],
                zero_rows=data[f"zero_{i}"]))
    return EmbeddingEnsemble(sources)
