"""Full-pool cosine retrieval and Hit Rate@K."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blob import read_blob, write_blob
from .errors import ContractError, LookupFailure

DEFAULT_KS = (1, 5, 10, 20, 50, 100)


@dataclass
class EvalPool:
    embeddings: np.ndarray
    ids: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if len(self.ids) == 0:
            raise ContractError("empty candidate pool")
        if len(set(self.ids)) != len(self.ids):
            raise ContractError("duplicate ids in candidate pool")
        emb = np.asarray(self.embeddings, dtype=np.float64)
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ContractError("zero embedding in candidate pool")
        self.embeddings = emb / norms
        self.index = {iid: n for n, iid in enumerate(self.ids)}
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[np.argsort(np.array(self.ids, dtype=object))] = np.arange(len(self.ids))

    def __len__(self):
        return len(self.ids)

    def vector(self, item_id: str) -> np.ndarray:
        try:
            return self.embeddings[self.index[item_id]]
        except KeyError:
            raise LookupFailure(f"query id {item_id!r} has no embedding") from None

    def _order(self, scores: np.ndarray, exclude: int | None) -> list[str]:
        order = np.lexsort((self._id_rank, -scores))
        if exclude is not None:
            order = order[order != exclude]
        return [self.ids[i] for i in order]


def score_all(query, pool: EvalPool, query_id: str | None = None) -> list[str]:
    """Rank every pool item by cosine to ``query`` (an id or a vector).

    Descending score, ties by ascending item id; the query's own row is skipped.
    """
    if isinstance(query, str):
        query_id = query
        query = pool.vector(query)
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    scores = pool.embeddings @ q
    return pool._order(scores, pool.index.get(query_id) if query_id is not None else None)


def rank_naive(query_id: str, pool: EvalPool) -> list[str]:
    """Reference ranking: one dot product per candidate, Python sort."""
    q = pool.vector(query_id)
    scored = []
    for iid, row in zip(pool.ids, pool.embeddings):
        if iid == query_id:
            continue
        scored.append((-float(np.dot(row, q)), iid))
    scored.sort()
    return [iid for _, iid in scored]


def rank_blocked(query_ids: list[str], pool: EvalPool, block: int = 512,
                 top: int | None = None) -> dict[str, list[str]]:
    """Blocked matrix-product scorer over many queries.

    Identical pool rows are scored once and shared, so exact duplicates always
    tie and fall back to the id order.
    """
    uniq, inverse = np.unique(pool.embeddings, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    qidx = []
    for qid in query_ids:
        if qid not in pool.index:
            raise LookupFailure(f"query id {qid!r} has no embedding")
        qidx.append(pool.index[qid])
    out: dict[str, list[str]] = {}
    for start in range(0, len(qidx), block):
        rows = np.array(qidx[start:start + block])
        scores = (pool.embeddings[rows] @ uniq.T)[:, inverse]
        for r, qi in zip(scores, rows):
            ranked = pool._order(r, int(qi))
            out[pool.ids[qi]] = ranked if top is None else ranked[:top]
    return out


@dataclass
class HitReport:
    hit_rates: dict[int, float]
    best_ranks: dict[str, float]

    def rows(self):
        return [(k, self.hit_rates[k]) for k in sorted(self.hit_rates)]


def hit_rate(ranked: dict[str, list[str]], positives: dict[str, set[str]],
             ks=DEFAULT_KS) -> HitReport:
    """A query hits at K when its best-ranked positive sits within the top K."""
    if not positives:
        raise ContractError("no queries to evaluate")
    best: dict[str, float] = {}
    for qid, pos in positives.items():
        if not pos:
            raise ContractError(f"query {qid!r} has no positives")
        ranks = {iid: r for r, iid in enumerate(ranked[qid], 1)}
        best[qid] = min((ranks.get(p, np.inf) for p in pos), default=np.inf)
    arr = np.array(list(best.values()))
    return HitReport({int(k): float(np.mean(arr <= k)) for k in ks}, best)


def evaluate(pool: EvalPool, pairs, ks=DEFAULT_KS) -> HitReport:
    positives: dict[str, set[str]] = {}
    for q, t in pairs:
        positives.setdefault(q, set()).add(t)
    ranked = rank_blocked(list(positives), pool)
    return hit_rate(ranked, positives, ks)


def export_embeddings(directory, ids: list[str], embeddings: np.ndarray) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "ids.txt").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
    write_blob(directory / "embeddings.tgqt", embeddings)


def load_embeddings(directory) -> EvalPool:
    directory = Path(directory)
    ids = [ln for ln in (directory / "ids.txt").read_text(encoding="utf-8").splitlines() if ln]
    return EvalPool(read_blob(directory / "embeddings.tgqt"), ids)


def write_report(directory, report: HitReport) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "hit_rate.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "hit_rate"])
        for k, v in report.rows():
            w.writerow([k, f"{v:.6f}"])
    with (directory / "ranks.tsv").open("w", newline="") as fh:
        fh.write("query_id\tbest_rank\n")
        for qid in sorted(report.best_ranks):
            r = report.best_ranks[qid]
            fh.write(f"{qid}\t{'inf' if not np.isfinite(r) else int(r)}\n")
