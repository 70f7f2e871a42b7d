"""Triple stores, gold clusters, word vectors, and 1-N grouping.

Entities and relations are identified by their normalized surface form, and
ids are handed out in order of first appearance over train, then valid, then
test.  Reciprocal relations are appended after the base relations, so the
inverse of relation ``r`` is ``r + n_base_relations``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

log = logging.getLogger(__name__)

INVERSE_PREFIX = "inverse of "
SPLITS = ("train", "valid", "test")


def normalize_name(raw: str) -> str:
    """Lowercase and collapse every whitespace run to one space."""
    return " ".join(raw.lower().split())


def tokenize(name: str) -> list[str]:
    return name.split(" ") if name else []


@dataclass
class TripleStore:
    entities: list[str]
    relations: list[str]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    n_base_relations: int | None = None
    entity_ids: dict[str, int] = field(default_factory=dict, repr=False)
    relation_ids: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for split in SPLITS:
            arr = np.asarray(getattr(self, split), dtype=np.int64).reshape(-1, 3)
            setattr(self, split, arr)
        if not self.entity_ids:
            self.entity_ids = {name: i for i, name in enumerate(self.entities)}
        if not self.relation_ids:
            self.relation_ids = {name: i for i, name in enumerate(self.relations)}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def has_reciprocals(self) -> bool:
        return self.n_base_relations is not None

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def inverse(self, relation: int) -> int:
        if self.n_base_relations is None:
            raise ValueError("store has no reciprocal relations")
        n = self.n_base_relations
        return relation + n if relation < n else relation - n

    def base_train(self) -> np.ndarray:
        """Training triples without the added reciprocal copies."""
        if self.n_base_relations is None:
            return self.train
        return self.train[self.train[:, 1] < self.n_base_relations]

    def names(self, kind: str) -> list[str]:
        return self.entities if kind == "entity" else self.relations


def read_triples(path) -> list[tuple[str, str, str]]:
    """Read a TAB-separated triple file, normalizing each field."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(f"expected 3 TAB-separated fields, found {len(fields)}", path, lineno)
            triples.append(tuple(normalize_name(f) for f in fields))
    return triples


def build_store(train: Sequence, valid: Sequence = (), test: Sequence = ()) -> TripleStore:
    """Assign dense ids to name triples in first-appearance order.

    Names are normalized, duplicates within a split are dropped, and a
    valid/test triple already present in an earlier split is dropped with a
    warning so the splits stay disjoint.
    """
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    coded = {}
    earlier: set = set()
    empty = 0
    for split, triples in zip(SPLITS, (train, valid, test)):
        rows = []
        seen: set = set()
        overlap = 0
        for raw in triples:
            h, r, t = (normalize_name(x) for x in raw)
            for name in (h, t):
                if name not in entity_ids:
                    entity_ids[name] = len(entity_ids)
                    empty += name == ""
            if r not in relation_ids:
                relation_ids[r] = len(relation_ids)
                empty += r == ""
            row = (entity_ids[h], relation_ids[r], entity_ids[t])
            if row in earlier:
                overlap += 1
                continue
            if row in seen:
                continue
            seen.add(row)
            rows.append(row)
        if overlap:
            log.warning("dropped %d %s triples that also occur in an earlier split", overlap, split)
        earlier |= seen
        coded[split] = np.array(rows, dtype=np.int64).reshape(-1, 3)
    if empty:
        log.warning("%d entity/relation names are empty after normalization", empty)
    return TripleStore(
        entities=list(entity_ids),
        relations=list(relation_ids),
        entity_ids=entity_ids,
        relation_ids=relation_ids,
        **coded,
    )


def load_triples(train_path, valid_path=None, test_path=None) -> TripleStore:
    splits = [read_triples(p) if p is not None else [] for p in (train_path, valid_path, test_path)]
    return build_store(*splits)


def load_dataset(directory) -> TripleStore:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from a directory."""
    directory = Path(directory)
    paths = []
    for split in SPLITS:
        p = directory / f"{split}.txt"
        paths.append(p if p.exists() else None)
    if paths[0] is None:
        raise FileNotFoundError(f"{directory} has no train.txt")
    return load_triples(*paths)


def save_store(store: TripleStore, directory) -> None:
    """Write the base (non-reciprocal) triples of every split as TSV files."""
    os.makedirs(directory, exist_ok=True)
    for split in SPLITS:
        triples = store.base_train() if split == "train" else store.split(split)
        with open(Path(directory) / f"{split}.txt", "w", encoding="utf-8") as fh:
            for h, r, t in triples:
                fh.write(f"{store.entities[h]}\t{store.relations[r]}\t{store.entities[t]}\n")


def add_reciprocals(store: TripleStore) -> TripleStore:
    """Add an ``inverse of`` relation per relation and invert every training triple."""
    if store.has_reciprocals:
        raise ValueError("reciprocal relations were already added to this store")
    n = store.n_relations
    relations = store.relations + [INVERSE_PREFIX + name for name in store.relations]
    inverted = store.train[:, [2, 1, 0]].copy()
    inverted[:, 1] += n
    relation_ids = dict(store.relation_ids)
    for i, name in enumerate(relations[n:], n):
        relation_ids.setdefault(name, i)
    return TripleStore(
        entities=store.entities,
        relations=relations,
        train=np.concatenate([store.train, inverted]),
        valid=store.valid,
        test=store.test,
        n_base_relations=n,
        entity_ids=store.entity_ids,
        relation_ids=relation_ids,
    )


# -- gold clusters ---------------------------------------------------------------
@dataclass
class ClusterMap:
    """Total map from entity id to gold cluster id."""

    cluster_of: np.ndarray
    _members: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.cluster_of = np.asarray(self.cluster_of, dtype=np.int64)
        if not self._members:
            n = int(self.cluster_of.max()) + 1 if self.cluster_of.size else 0
            order = np.argsort(self.cluster_of, kind="stable")
            bounds = np.searchsorted(self.cluster_of[order], np.arange(n + 1))
            self._members = [order[bounds[c]:bounds[c + 1]] for c in range(n)]

    @classmethod
    def singletons(cls, n_entities: int) -> "ClusterMap":
        return cls(np.arange(n_entities))

    @property
    def n_clusters(self) -> int:
        return len(self._members)

    def members(self, entity: int) -> np.ndarray:
        """All entities in the same cluster as ``entity`` (including it)."""
        return self._members[self.cluster_of[entity]]


def clusters_from_groups(n_entities: int, groups: Iterable[Iterable[int]]) -> ClusterMap:
    """Merge overlapping groups of entity ids (union-find); others stay singletons."""
    parent = list(range(n_entities))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for group in groups:
        group = list(group)
        for other in group[1:]:
            a, b = find(group[0]), find(other)
            if a != b:
                parent[max(a, b)] = min(a, b)
    labels: dict[int, int] = {}
    cluster_of = np.empty(n_entities, dtype=np.int64)
    for e in range(n_entities):
        root = find(e)
        cluster_of[e] = labels.setdefault(root, len(labels))
    return ClusterMap(cluster_of)


def load_clusters(path, store: TripleStore) -> ClusterMap:
    """Read one TAB-separated cluster of entity names per line."""
    groups = []
    unknown = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            names = [normalize_name(x) for x in line.rstrip("\n").split("\t")]
            ids = []
            for name in names:
                if not name:
                    continue
                if name in store.entity_ids:
                    ids.append(store.entity_ids[name])
                else:
                    unknown += 1
            if ids:
                groups.append(ids)
    if unknown:
        log.info("%d cluster members do not occur in the store and were ignored", unknown)
    return clusters_from_groups(store.n_entities, groups)


def save_clusters(clusters: ClusterMap, store: TripleStore, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in range(clusters.n_clusters):
            members = clusters._members[c]
            if len(members) > 1:
                fh.write("\t".join(store.entities[e] for e in members) + "\n")


# -- word vectors ------------------------------------------------------------------
@dataclass
class WordVectors:
    index: dict[str, int]
    vectors: np.ndarray
    oov: str = "random"

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[self.index[word]]


def load_word_vectors(path, dim: int | None = None) -> WordVectors:
    """Read GloVe-style text vectors: ``word v1 ... vd`` per line."""
    index: dict[str, int] = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # word2vec-style header
            if len(parts) < 2:
                raise FormatError("expected a word followed by its vector", path, lineno)
            if dim is None:
                dim = len(parts) - 1
            if len(parts) - 1 != dim:
                raise FormatError(f"vector has {len(parts) - 1} components, expected {dim}", path, lineno)
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise FormatError("non-numeric vector component", path, lineno) from None
            if parts[0] not in index:
                index[parts[0]] = len(rows)
                rows.append(vec)
    vectors = np.array(rows, dtype=np.float64).reshape(-1, dim or 0)
    return WordVectors(index, vectors)


def build_vocabulary(store: TripleStore) -> list[str]:
    """Words of all entity then relation names, in order of first appearance."""
    vocab: dict[str, None] = {}
    for name in store.entities + store.relations:
        for word in tokenize(name):
            vocab.setdefault(word, None)
    return list(vocab)


# -- 1-N grouping -------------------------------------------------------------------
@dataclass
class OneToNGroup:
    head: int
    relation: int
    tails: np.ndarray


def group_one_to_n(store: TripleStore) -> list[OneToNGroup]:
    """Group training triples by (head, relation) in order of first appearance."""
    if not store.has_reciprocals:
        raise ValueError("add reciprocal relations before grouping")
    tails: dict[tuple[int, int], list[int]] = {}
    for h, r, t in store.train.tolist():
        tails.setdefault((h, r), []).append(t)
    return [OneToNGroup(h, r, np.unique(np.array(ts, dtype=np.int64))) for (h, r), ts in tails.items()]


def in_batch_candidates(groups: Sequence[OneToNGroup]) -> np.ndarray:
    """Sorted union of the tails of a batch of groups."""
    if not groups:
        raise ValueError("empty batch")
    return np.unique(np.concatenate([g.tails for g in groups]))
