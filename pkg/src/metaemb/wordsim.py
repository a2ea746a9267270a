"""Spearman-correlation evaluation of meta-embeddings on word pairs."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, EvaluationError
from .mtl import resolve_pairs

MEASURES = ("cosine", "euclidean", "manhattan", "asymmetric-cosine")


def fractional_ranks(values):
    """Average ranks (1-based); tied values share the mean of their ranks."""
    values = np.asarray(values, dtype=np.float64)
    uniq, inverse, counts = np.unique(values, return_inverse=True,
                                      return_counts=True)
    upper = np.cumsum(counts)
    lower = upper - counts
    avg_rank = (lower + upper - 1) / 2.0 + 1.0
    return avg_rank[inverse]


def spearman(x, y):
    """Pearson correlation of average ranks; ties get fractional ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ConfigError("spearman needs two equal-length sequences of size >= 2")
    rx = fractional_ranks(x)
    ry = fractional_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    vx = float((rx * rx).sum())
    vy = float((ry * ry).sum())
    if vx == 0.0 or vy == 0.0:
        raise EvaluationError("spearman undefined on a constant sequence")
    return float((rx * ry).sum()) / np.sqrt(vx * vy)


@dataclass
class EvalReport:
    dataset: str
    method: str
    measure: str
    rho_s: float
    pairs_used: int
    pairs_dropped: int


def pair_scores(meta, idx1, idx2, measure):
    """Model similarity per pair (larger = more similar)."""
    h1 = meta.matrix[idx1]
    h2 = meta.matrix[idx2]
    if measure == "cosine":
        return kernels.row_cosines(h1, h2)
    if measure == "euclidean":
        return -np.linalg.norm(h1 - h2, axis=1)
    if measure == "manhattan":
        return -np.abs(h1 - h2).sum(axis=1)
    if measure == "asymmetric-cosine":
        n1sq = (h1 * h1).sum(axis=1)
        return (h1 * h2).sum(axis=1) / n1sq
    raise ConfigError(f"unknown measure {measure!r}; use one of {MEASURES}")


def eval_wordsim(meta, dataset, measure="cosine"):
    """Spearman correlation between model scores and annotations.

    Pairs are dropped (and counted) when a token is out of vocabulary,
    flagged as synthetic, or has a zero vector that the cosine-family
    measures cannot score.
    """
    if measure not in MEASURES:
        raise ConfigError(f"unknown measure {measure!r}; use one of {MEASURES}")
    resolved, dropped = resolve_pairs(dataset, meta.vocab)
    idx1 = np.array([meta.vocab.index(w) for w in resolved.w1], dtype=int)
    idx2 = np.array([meta.vocab.index(w) for w in resolved.w2], dtype=int)
    bad = np.zeros(len(resolved), dtype=bool)
    if meta.flagged_rows is not None and meta.flagged_rows.any():
        bad |= meta.flagged_rows[idx1] | meta.flagged_rows[idx2]
    norms = np.linalg.norm(meta.matrix, axis=1)
    bad |= (norms[idx1] == 0.0) | (norms[idx2] == 0.0)
    keep = ~bad
    dropped += int(bad.sum())
    if keep.sum() < 2:
        raise EvaluationError(
            f"dataset {dataset.name}: fewer than 2 scorable pairs remain")
    scores = pair_scores(meta, idx1[keep], idx2[keep], measure)
    rho = spearman(scores, resolved.y[keep])
    return EvalReport(dataset=dataset.name, method=meta.method, measure=measure,
                      rho_s=rho, pairs_used=int(keep.sum()), pairs_dropped=dropped)


REPORT_COLUMNS = ("dataset", "method", "measure", "rho_s", "pairs_used",
                  "pairs_dropped")


def write_reports_csv(reports, fh):
    writer = csv.writer(fh)
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        writer.writerow([r.dataset, r.method, r.measure, repr(r.rho_s),
                         r.pairs_used, r.pairs_dropped])


def format_report_table(reports):
    """Aligned text table; correlations shown x100 as is conventional."""
    rows = [REPORT_COLUMNS] + [
        (r.dataset, r.method, r.measure, f"{100.0 * r.rho_s:.2f}",
         str(r.pairs_used), str(r.pairs_dropped))
        for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(len(REPORT_COLUMNS))]
    out = io.StringIO()
    for row in rows:
        out.write("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        out.write("\n")
    return out.getvalue()
