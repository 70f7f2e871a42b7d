"""Filtered, cluster-aware ranking evaluation.

Every evaluation triple ``<h, r, t>`` yields a tail query ``<h, r, ?>`` and,
through the reciprocal relation, a head query ``<t, r^-1, ?>``.  Ranks are
filtered (other known answers removed) and pessimistic: candidates tied with
the gold answer are counted as ranked above it.  With gold clusters, the
best-scoring member of the gold answer's cluster is the answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import ClusterMap, TripleStore

HITS_AT = (1, 3, 5, 10, 30, 50)
REPORT_COLUMNS = ("split", "direction", "MR", "MRR") + tuple(f"H@{n}" for n in HITS_AT)
TAIL, HEAD = "tail", "head"


class FilterIndex:
    """Known-true tails per (entity, relation) over train, valid and test.

    Keys use reciprocal relation ids for head-side facts, so ``(t, r^-1)``
    maps to every known head of ``r`` with tail ``t``.  Forward and inverse
    keys are kept apart unless ``merge_inverse`` is set, which also filters
    ``(h, r^-1)`` answers from ``(h, r)`` queries.
    """

    def __init__(self, store: TripleStore, merge_inverse: bool = False):
        if not store.has_reciprocals:
            raise ValueError("FilterIndex needs a store with reciprocal relations")
        n = store.n_base_relations
        forward = np.concatenate([store.base_train(), store.valid, store.test])
        inverted = forward[:, [2, 1, 0]].copy()
        inverted[:, 1] += n
        facts = np.concatenate([forward, inverted])
        if merge_inverse:
            swapped = facts.copy()
            swapped[:, 1] = np.where(swapped[:, 1] < n, swapped[:, 1] + n, swapped[:, 1] - n)
            facts = np.concatenate([facts, swapped])
        facts = np.unique(facts, axis=0)
        keys = facts[:, 0] * store.n_relations + facts[:, 1]
        self._n_relations = store.n_relations
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        ends = np.r_[starts[1:], len(keys)]
        self._index = {int(keys[s]): facts[s:e, 2] for s, e in zip(starts, ends)}
        self._empty = np.zeros(0, dtype=np.int64)

    def __getitem__(self, key: tuple[int, int]) -> np.ndarray:
        h, r = key
        return self._index.get(int(h) * self._n_relations + int(r), self._empty)


def filtered_rank(logits: np.ndarray, gold: int, filtered: Iterable[int] = ()) -> int:
    """1 + number of unfiltered candidates scoring at least as high as ``gold``."""
    logits = np.asarray(logits)
    filtered = np.asarray(list(filtered) if not isinstance(filtered, np.ndarray) else filtered, dtype=np.int64)
    if np.any(filtered == gold):
        raise ValueError(f"gold entity {gold} is in its own filter set")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    keep = np.ones(len(logits), dtype=bool)
    keep[filtered] = False
    keep[gold] = False
    return 1 + int(np.count_nonzero(logits[keep] >= logits[gold]))


def cluster_rank(logits: np.ndarray, cluster: Sequence[int], filtered: Iterable[int] = ()) -> int:
    """Best filtered rank over members of the gold cluster.

    Each member is ranked with the known answers and the other members
    filtered out.
    """
    cluster = np.asarray(list(cluster), dtype=np.int64)
    if cluster.size == 0:
        raise ValueError("empty gold cluster")
    base = set(np.asarray(list(filtered), dtype=np.int64).tolist()) | set(cluster.tolist())
    return min(filtered_rank(logits, m, np.array(sorted(base - {m}), dtype=np.int64)) for m in cluster.tolist())


def metrics(ranks) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    # fsum makes the aggregates independent of query order
    out = {"MR": math.fsum(ranks) / ranks.size, "MRR": math.fsum(1.0 / ranks) / ranks.size}
    for n in HITS_AT:
        out[f"H@{n}"] = float((ranks <= n).mean())
    return out


@dataclass
class RankReport:
    split: str
    triples: np.ndarray
    directions: np.ndarray
    ranks: np.ndarray
    aggregates: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates and len(self.ranks):
            self.aggregates = metrics(self.ranks)

    @property
    def mr(self) -> float:
        return self.aggregates["MR"]

    @property
    def mrr(self) -> float:
        return self.aggregates["MRR"]

    def hits(self, n: int) -> float:
        return self.aggregates[f"H@{n}"]

    def by_direction(self, direction: str) -> dict[str, float]:
        return metrics(self.ranks[self.directions == direction])

    def rows(self) -> list[list]:
        rows = []
        for direction in (TAIL, HEAD):
            if np.any(self.directions == direction):
                agg = self.by_direction(direction)
                rows.append([self.split, direction] + [agg[c] for c in REPORT_COLUMNS[2:]])
        rows.append([self.split, "both"] + [self.aggregates[c] for c in REPORT_COLUMNS[2:]])
        return rows

    def to_tsv(self) -> str:
        lines = ["\t".join(REPORT_COLUMNS)]
        for row in self.rows():
            lines.append("\t".join(row[:2] + [f"{v:.6f}" for v in row[2:]]))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    def write_queries(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("head\trelation\ttail\tdirection\trank\n")
            for (h, r, t), d, k in zip(self.triples.tolist(), self.directions.tolist(), self.ranks.tolist()):
                fh.write(f"{h}\t{r}\t{t}\t{d}\t{k}\n")


def read_report(path) -> dict[tuple[str, str], dict[str, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    out = {}
    for line in lines[1:]:
        fields = line.split("\t")
        out[(fields[0], fields[1])] = {k: float(v) for k, v in zip(header[2:], fields[2:])}
    return out


def rank_queries(
    scores: np.ndarray,
    golds: np.ndarray,
    filters: Sequence[np.ndarray],
    clusters: Sequence[np.ndarray] | None = None,
) -> np.ndarray:
    """Vectorized pessimistic filtered (cluster) ranks for a block of queries."""
    if not np.all(np.isfinite(scores)):
        raise ValueError("model produced non-finite scores")
    b = scores.shape[0]
    excluded = np.zeros(scores.shape, dtype=bool)
    best = np.empty(b, dtype=scores.dtype)
    for i in range(b):
        excluded[i, filters[i]] = True
        members = clusters[i] if clusters is not None else golds[i:i + 1]
        excluded[i, members] = True
        best[i] = scores[i, members].max()
    return 1 + np.count_nonzero((scores >= best[:, None]) & ~excluded, axis=1)


def queries(store: TripleStore, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(query rows ``[entity, relation, gold]``, directions, source triples)."""
    triples = store.base_train() if split == "train" else store.split(split)
    n = store.n_base_relations
    tail_q = triples.copy()
    head_q = triples[:, [2, 1, 0]].copy()
    head_q[:, 1] += n
    rows = np.concatenate([tail_q, head_q])
    directions = np.array([TAIL] * len(triples) + [HEAD] * len(triples))
    return rows, directions, np.concatenate([triples, triples])


def evaluate(
    model,
    store: TripleStore,
    clusters: ClusterMap | None = None,
    split: str = "test",
    filter_index: FilterIndex | None = None,
    batch_size: int = 256,
    merge_inverse: bool = False,
) -> RankReport:
    """Rank every test-split query against all entities."""
    if not store.has_reciprocals:
        raise ValueError("evaluation needs a store with reciprocal relations")
    if len(queries(store, split)[0]) == 0:
        raise ValueError(f"split {split!r} is empty")
    was_training = model.training
    model.eval()
    try:
        predict = model.predictor()
        index = filter_index or FilterIndex(store, merge_inverse)
        rows, directions, triples = queries(store, split)
        ranks = np.empty(len(rows), dtype=np.int64)
        for start in range(0, len(rows), batch_size):
            block = rows[start:start + batch_size]
            scores = predict(block[:, 0], block[:, 1])
            filters = [index[(e, r)] for e, r, _ in block.tolist()]
            members = [clusters.members(g) for g in block[:, 2]] if clusters is not None else None
            ranks[start:start + len(block)] = rank_queries(scores, block[:, 2], filters, members)
    finally:
        model.train(was_training)
    return RankReport(split, triples, directions, ranks)


def zero_shot(checkpoint, store: TripleStore, clusters: ClusterMap | None = None,
              split: str = "test", seed: int = 0) -> RankReport:
    """Evaluate a pre-trained GRU checkpoint on a new store without training."""
    from .transfer import init_finetune_noencoder

    model = init_finetune_noencoder(checkpoint, store, seed=seed)
    return evaluate(model, store, clusters, split)
