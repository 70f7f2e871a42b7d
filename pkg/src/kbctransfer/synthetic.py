"""Seeded synthetic knowledge bases for memorization and transfer experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClusterMap, TripleStore, add_reciprocals, build_store, clusters_from_groups

CONSONANTS = "bcdfghjklmnprstvz"
VOWELS = "aeiou"


def pseudo_words(rng: np.random.Generator, n: int, taken=()) -> list[str]:
    """``n`` distinct pronounceable nonsense words not in ``taken``."""
    seen = set(taken)
    out = []
    while len(out) < n:
        k = int(rng.integers(2, 4))
        w = "".join(CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))] for _ in range(k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def _names(rng, n, pool, lengths):
    names, seen = [], set()
    while len(names) < n:
        k = int(rng.integers(lengths[0], lengths[1] + 1))
        name = " ".join(rng.choice(pool, size=k))
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def memorization_kb(seed: int = 0, n_entities: int = 100, n_relations: int = 20, n_triples: int = 500,
                    name_lengths=(2, 4), pool_size: int = 60) -> TripleStore:
    """Random triples over multi-word names, all in the training split."""
    rng = np.random.default_rng([seed, 101])
    pool = pseudo_words(rng, pool_size, taken=("inverse", "of"))
    entities = _names(rng, n_entities, pool, name_lengths)
    relations = _names(rng, n_relations, pool, name_lengths)
    triples = set()
    while len(triples) < n_triples:
        triples.add((int(rng.integers(n_entities)), int(rng.integers(n_relations)), int(rng.integers(n_entities))))
    rows = sorted(triples)
    return add_reciprocals(build_store([(entities[h], relations[r], entities[t]) for h, r, t in rows]))


@dataclass
class TransferPair:
    source: TripleStore
    target: TripleStore
    target_clusters: ClusterMap
    vocab_overlap: float


ENTITY_TEMPLATES_A = ("{w}", "{w} {g}", "the {w}", "the {w} {g}")
ENTITY_TEMPLATES_B = ("{w}", "{w} {g}", "{w} {m}")
RELATION_TEMPLATES_A = ("{a} {b}", "was {a} {b}", "{a}")
RELATION_TEMPLATES_B = ("{a} {b}", "is {a} {b}")


def transfer_pair(
    seed: int = 0,
    n_source: int = 50_000,
    n_target: int = 2_000,
    n_groups: int = 12,
    n_latent: int = 1500,
    n_regions: int = 3,
    n_latent_relations: int = 40,
    target_only_fraction: float = 0.2,
    n_modifiers: int = 25,
    target_weight: float = 0.4,
    held_in_source: float = 0.5,
    valid_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> TransferPair:
    """A large source corpus and a small target corpus drawn from one latent world.

    Latent entities carry a unique core word and a group word and live in
    one of several regions; each latent relation links a source group to a
    destination group inside every region.  The target corpus is one region.  Surface forms
    wrap these words in templates, so one latent entity has several names.
    A ``held_in_source`` share of the target valid/test facts also occurs in
    the source corpus under other surface forms; the rest never does.  Some
    target entities and all target modifiers are new.  ``target_weight`` is
    the share of source triples drawn from the target region.
    """
    rng = np.random.default_rng([seed, 202])
    n_words_needed = n_groups + n_latent + 2 * n_latent_relations + n_modifiers
    words = pseudo_words(rng, n_words_needed, taken=("inverse", "of", "the", "was", "is"))
    group_words = words[:n_groups]
    core = words[n_groups:n_groups + n_latent]
    rel_words = words[n_groups + n_latent:n_groups + n_latent + 2 * n_latent_relations]
    modifiers = words[n_groups + n_latent + 2 * n_latent_relations:]
    group_of = rng.integers(n_groups, size=n_latent)
    region_of = rng.integers(n_regions, size=n_latent)
    members = {(g, k): np.flatnonzero((group_of == g) & (region_of == k))
               for g in range(n_groups) for k in range(n_regions)}

    # latent facts: each relation maps a source-group member to 1-2 destination members of its region
    facts = []
    for r in range(n_latent_relations):
        gs, gd = rng.integers(n_groups, size=2)
        for k in range(n_regions):
            dst = members[(gd, k)]
            if len(dst) == 0:
                continue
            for e in members[(gs, k)]:
                for t in rng.choice(dst, size=int(rng.integers(1, 3)), replace=True):
                    facts.append((int(e), r, int(t)))
    facts = sorted(set(f for f in facts if f[0] != f[2]))
    facts_arr = np.array(facts, dtype=np.int64)

    # target world: region 0; a fraction of its entities never appears in the source corpus
    target_latent = rng.permutation(np.flatnonzero(region_of == 0))
    n_only = int(round(target_only_fraction * len(target_latent)))
    target_only = set(target_latent[:n_only].tolist())
    in_target = region_of == 0
    target_facts = facts_arr[in_target[facts_arr[:, 0]]]
    if len(target_facts) < n_target:
        raise ValueError(f"latent world yields only {len(target_facts)} target facts, asked for {n_target}")
    target_facts = target_facts[rng.permutation(len(target_facts))[:n_target]]
    n_valid = int(round(valid_fraction * n_target))
    n_test = int(round(test_fraction * n_target))
    n_train = n_target - n_valid - n_test
    # held-out facts must not involve target-only entities, so the source corpus can contain them
    touches_only = np.array([h in target_only or t in target_only for h, _, t in target_facts.tolist()])
    order = np.r_[np.flatnonzero(touches_only), np.flatnonzero(~touches_only)]
    if touches_only.sum() > n_train:
        raise ValueError("too many facts involve target-only entities")
    target_facts = target_facts[order]
    tf_train, tf_held = target_facts[:n_train], target_facts[n_train:]
    tf_held = tf_held[rng.permutation(len(tf_held))]
    tf_valid, tf_test = tf_held[:n_valid], tf_held[n_valid:]

    def entity_name(e, templates):
        tpl = templates[rng.integers(len(templates))]
        return tpl.format(w=core[e], g=group_words[group_of[e]], m=modifiers[rng.integers(len(modifiers))])

    def relation_name(r, templates):
        tpl = templates[rng.integers(len(templates))]
        return tpl.format(a=rel_words[2 * r], b=rel_words[2 * r + 1], m=modifiers[rng.integers(len(modifiers))])

    # source corpus: sampled facts (with repetition under different surface forms), none touching target-only
    held_all = np.concatenate([tf_valid, tf_test])
    held_all = held_all[rng.permutation(len(held_all))].tolist()
    n_keep = int(round(held_in_source * len(held_all)))
    held = {tuple(f) for f in held_all[:n_keep]}
    hidden = {tuple(f) for f in held_all[n_keep:]}
    allowed = np.array([h not in target_only and t not in target_only and (h, r, t) not in hidden
                        for h, r, t in facts], dtype=bool)
    source_facts = facts_arr[allowed]
    in_region = in_target[source_facts[:, 0]]
    weights = np.where(in_region, target_weight / max(in_region.sum(), 1),
                       (1 - target_weight) / max((~in_region).sum(), 1))
    weights /= weights.sum()
    picks = rng.choice(len(source_facts), size=n_source, p=weights)
    held_rows = np.array([i for i, f in enumerate(source_facts.tolist()) if tuple(f) in held], dtype=np.int64)
    picks[:len(held_rows)] = held_rows
    source_triples = set()
    attempts = 0
    for i in picks.tolist():
        h, r, t = source_facts[i]
        source_triples.add((entity_name(h, ENTITY_TEMPLATES_A), relation_name(r, RELATION_TEMPLATES_A),
                            entity_name(t, ENTITY_TEMPLATES_A)))
    while len(source_triples) < n_source and attempts < 10 * n_source:
        h, r, t = source_facts[rng.choice(len(source_facts), p=weights)]
        source_triples.add((entity_name(h, ENTITY_TEMPLATES_A), relation_name(r, RELATION_TEMPLATES_A),
                            entity_name(t, ENTITY_TEMPLATES_A)))
        attempts += 1
    source_list = sorted(source_triples)
    rng.shuffle(source_list)
    n_sv = max(1, len(source_list) // 50)
    source = add_reciprocals(build_store(source_list[2 * n_sv:], source_list[:n_sv], source_list[n_sv:2 * n_sv]))

    # target corpus: a small set of surface forms per latent entity, so clusters have several members
    forms: dict[int, list[str]] = {}

    def target_entity(e):
        options = forms.setdefault(e, [])
        if len(options) < 2 or (len(options) < 3 and rng.random() < 0.2):
            name = entity_name(e, ENTITY_TEMPLATES_B)
            if name not in options:
                options.append(name)
            return name
        return options[rng.integers(len(options))]

    splits = []
    for block in (tf_train, tf_valid, tf_test):
        splits.append([(target_entity(h), relation_name(r, RELATION_TEMPLATES_B), target_entity(t))
                       for h, r, t in block.tolist()])
    target = add_reciprocals(build_store(*splits))
    groups = [[target.entity_ids[n] for n in names] for names in forms.values()]
    clusters = clusters_from_groups(target.n_entities, groups)

    source_vocab = {w for name in source.entities + source.relations for w in name.split()}
    target_vocab = {w for name in target.entities + target.relations[:target.n_base_relations] for w in name.split()}
    overlap = len(target_vocab & source_vocab) / len(target_vocab)
    return TransferPair(source, target, clusters, overlap)
