"""Analogy answering by additive cosine offset (a:b :: c:?).

Candidates are ranked by cos(Z(b) - Z(a) + Z(c), Z(d)); the top-ranked
candidate is the predicted answer.  Question words never compete as
candidates.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EvaluationError, ParseError

logger = logging.getLogger(__name__)

CANDIDATE_POLICIES = ("full-vocab", "provided-list")


@dataclass
class AnalogyDataset:
    name: str
    questions: list            # (a, b, c, answer) token tuples
    relations: list            # relation label per question
    candidate_policy: str = "full-vocab"
    candidates: list = field(default=None)

    def __post_init__(self):
        if self.candidate_policy not in CANDIDATE_POLICIES:
            raise ConfigError(
                f"unknown candidate policy {self.candidate_policy!r}")
        if self.candidate_policy == "provided-list" and not self.candidates:
            raise ConfigError("provided-list policy needs a candidate list")
        if len(self.questions) != len(self.relations):
            raise ConfigError("questions and relations must align")

    def __len__(self):
        return len(self.questions)


def load_analogy_dataset(path, name=None, candidates_path=None):
    """Read the 4-token-per-line analogy format.

    Lines starting with ':' open a named relation section; all other
    lines must hold exactly four whitespace-separated tokens.  When a
    candidate file is given (one token per line, '#' comments) ranking
    is restricted to that list.
    """
    questions = []
    relations = []
    current = "all"
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith(":"):
                current = stripped[1:].strip() or "all"
                continue
            parts = stripped.split()
            if len(parts) != 4:
                raise ParseError(path, line_no,
                                 f"expected 4 tokens, got {len(parts)}")
            questions.append(tuple(parts))
            relations.append(current)
    if not questions:
        raise EvaluationError(f"{path}: no analogy questions found")
    candidates = None
    policy = "full-vocab"
    if candidates_path is not None:
        candidates = load_candidate_list(candidates_path)
        policy = "provided-list"
    return AnalogyDataset(name=name or str(path), questions=questions,
                          relations=relations, candidate_policy=policy,
                          candidates=candidates)


def load_candidate_list(path):
    tokens = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            tok = line.strip()
            if tok and not tok.startswith("#"):
                tokens.append(tok)
    if not tokens:
        raise EvaluationError(f"{path}: empty candidate list")
    return tokens


def _query_vector(meta, a, b, c):
    return meta.row(b) - meta.row(a) + meta.row(c)


def cosadd_rank(meta, a, b, c, candidates):
    """Candidates ranked by cos(Z(b) - Z(a) + Z(c), Z(d)), best first.

    The question words a, b, c are excluded from the ranking, as are
    zero-norm candidate rows (their cosine is undefined).  Ties break
    lexicographically.  A zero offset vector raises EvaluationError.
    """
    pool = sorted(set(candidates) - {a, b, c})
    if not pool:
        raise ConfigError("no candidates remain after excluding question words")
    query = _query_vector(meta, a, b, c)
    qn = np.linalg.norm(query)
    if qn == 0.0:
        raise EvaluationError(
            f"zero offset vector for question ({a}, {b}, {c})")
    rows = meta.rows_for(pool)
    norms = np.linalg.norm(rows, axis=1)
    usable = norms > 0.0
    if not usable.any():
        raise EvaluationError("every candidate row has zero norm")
    scores = np.full(len(pool), -np.inf)
    scores[usable] = (rows[usable] @ query) / (norms[usable] * qn)
    order = np.argsort(-scores, kind="stable")  # pool is sorted, so ties stay lexicographic
    return [(pool[i], float(scores[i])) for i in order if usable[i]]


@dataclass
class AnalogyReport:
    dataset: str
    method: str
    accuracy: float
    per_relation: dict         # relation -> (correct, scored)
    questions_total: int
    scored: int
    dropped: int               # unresolvable tokens or missing gold candidate
    flagged: int               # zero offset vector


def eval_analogy(meta, dataset):
    """Top-1 accuracy of offset ranking over a dataset.

    Questions with out-of-vocabulary tokens (or whose gold answer is
    not in the candidate pool) are dropped; questions with a zero
    offset vector are flagged.  Both counts are reported and excluded
    from the accuracy denominator.
    """
    if len(dataset) == 0:
        raise EvaluationError(f"dataset {dataset.name} is empty")
    vocab = meta.vocab
    base_candidates = (dataset.candidates
                       if dataset.candidate_policy == "provided-list"
                       else list(vocab.tokens))
    base_candidates = [t for t in base_candidates if t in vocab]
    if not base_candidates:
        raise EvaluationError("no candidate tokens resolve in the vocabulary")
    candidate_set = set(base_candidates)
    correct = 0
    scored = 0
    dropped = 0
    flagged = 0
    per_relation = {}
    for (a, b, c, answer), relation in zip(dataset.questions, dataset.relations):
        stats = per_relation.setdefault(relation, [0, 0])
        if any(t not in vocab for t in (a, b, c, answer)):
            dropped += 1
            continue
        if answer in (a, b, c) or answer not in candidate_set:
            # the gold answer can never be ranked; scoring would be meaningless
            dropped += 1
            continue
        try:
            ranked = cosadd_rank(meta, a, b, c, base_candidates)
        except EvaluationError:
            flagged += 1
            continue
        scored += 1
        stats[1] += 1
        if ranked and ranked[0][0] == answer:
            correct += 1
            stats[0] += 1
    if scored == 0:
        raise EvaluationError(
            f"dataset {dataset.name}: no scorable questions "
            f"({dropped} dropped, {flagged} flagged)")
    if dropped:
        logger.info("dataset %s: %d question(s) dropped, %d flagged",
                    dataset.name, dropped, flagged)
    return AnalogyReport(dataset=dataset.name, method=meta.method,
                         accuracy=correct / scored,
                         per_relation={k: tuple(v) for k, v in per_relation.items()},
                         questions_total=len(dataset), scored=scored,
                         dropped=dropped, flagged=flagged)
