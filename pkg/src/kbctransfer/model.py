"""A KBC model: entity encoder + relation encoder + scorer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TripleStore, WordVectors, build_vocabulary
from .encoders import GRUEncoder, NoEncoder
from .scoring import ConvE, FiveStar, five_star_factors, make_scorer, n3_penalty
from .tensor import Tensor, no_grad

ENCODERS = ("gru", "noencoder")
MODELS = ("tucker", "conve", "5star")


@dataclass
class Scores:
    logits: Tensor
    heads: Tensor
    relations: Tensor
    tails: Tensor
    candidates: np.ndarray


class KBCModel:
    def __init__(self, entity_encoder, relation_encoder, scorer, seed: int = 0):
        self.entity_encoder = entity_encoder
        self.relation_encoder = relation_encoder
        self.scorer = scorer
        self.training = False
        self.seed = seed
        self.rng = np.random.default_rng([seed, 7])

    # -- description ---------------------------------------------------------
    @property
    def model_kind(self) -> str:
        return self.scorer.kind

    @property
    def encoder_kind(self) -> str:
        return self.entity_encoder.kind

    @property
    def dim(self) -> int:
        return self.scorer.dim

    @property
    def n_entities(self) -> int:
        return self.entity_encoder.n_items

    @property
    def n_relations(self) -> int:
        return self.relation_encoder.n_items

    def train(self, mode: bool = True) -> "KBCModel":
        self.training = mode
        return self

    def eval(self) -> "KBCModel":
        return self.train(False)

    def reseed_dropout(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    # -- parameters ------------------------------------------------------------
    def _modules(self):
        return {"entity_encoder": self.entity_encoder, "relation_encoder": self.relation_encoder,
                "scorer": self.scorer}

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for prefix, module in self._modules().items():
            for name, p in module.parameters().items():
                params[f"{prefix}.{name}"] = p
        return params

    def tensors(self) -> dict[str, Tensor]:
        """Every learnable tensor, including frozen word embeddings."""
        out = {}
        for prefix, module in self._modules().items():
            source = module.state_tensors() if hasattr(module, "state_tensors") else module.parameters()
            for name, p in source.items():
                out[f"{prefix}.{name}"] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, bn in self.scorer.bn_layers().items():
            for k, v in bn.buffers().items():
                out[f"scorer.{name}.{k}"] = v
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.tensors().items()}
        state.update({name: v.copy() for name, v in self.buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        tensors = self.tensors()
        bns = {f"scorer.{n}": bn for n, bn in self.scorer.bn_layers().items()}
        expected = set(tensors) | set(self.buffers())
        if strict:
            missing = expected - set(state)
            extra = set(state) - expected
            if missing or extra:
                raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            if name in tensors:
                t = tensors[name]
                if t.shape != value.shape:
                    raise ValueError(f"{name}: shape {value.shape} does not match {t.shape}")
                t.data = np.array(value, dtype=t.dtype)
            elif name in expected:
                layer, buf = name.rsplit(".", 1)
                bn = bns[layer]
                setattr(bn, buf, np.array(value, dtype=getattr(bn, buf).dtype))

    # -- scoring -----------------------------------------------------------------
    def forward(self, heads, relations, candidates=None) -> Scores:
        """Logits of every (head, relation) row against candidate tails.

        With ``candidates=None`` every entity is a candidate.
        """
        heads = np.asarray(heads, dtype=np.int64)
        relations = np.asarray(relations, dtype=np.int64)
        if candidates is None:
            cand = np.arange(self.n_entities)
            table = self.entity_encoder.encode_all()
            vt = table
            vh = table.take(heads)
            tail_ids = None
        else:
            cand = np.asarray(candidates, dtype=np.int64)
            ids, inverse = np.unique(np.concatenate([heads, cand]), return_inverse=True)
            table = self.entity_encoder(ids)
            vh = table.take(inverse[: len(heads)])
            vt = table.take(inverse[len(heads):])
            tail_ids = cand
        vr = self.relation_encoder(relations)
        logits = self.scorer(vh, vr, vt, tail_ids=tail_ids, training=self.training, rng=self.rng)
        return Scores(logits, vh, vr, vt, cand)

    def penalty(self, scores: Scores, positive_columns: np.ndarray, weight: float) -> Tensor | None:
        """N3 regularizer over the batch's heads, relations and positive tails (5*E only)."""
        if not isinstance(self.scorer, FiveStar) or weight == 0:
            return None
        vt = scores.tails.take(positive_columns)
        return n3_penalty(five_star_factors(scores.heads, scores.relations, vt), weight)

    def predictor(self):
        """Frozen scoring function ``(heads, relations) -> logits`` over all entities."""
        with no_grad():
            table = self.entity_encoder.encode_all()
            rel_table = self.relation_encoder.encode_all()

        def predict(heads, relations) -> np.ndarray:
            with no_grad():
                vh = table.take(np.asarray(heads, dtype=np.int64))
                vr = rel_table.take(np.asarray(relations, dtype=np.int64))
                return self.scorer(vh, vr, table, training=False).data

        return predict


def build_model(
    model: str,
    encoder: str,
    dim: int,
    store: TripleStore,
    *,
    vocab=None,
    word_vectors: WordVectors | None = None,
    word_dim: int | None = None,
    dropout: float = 0.0,
    conve_reshape=None,
    conve_channels: int = 32,
    pooling: str = "last",
    freeze_words: bool = False,
    seed: int = 0,
) -> KBCModel:
    """Randomly initialized model sized for ``store``."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    if encoder not in ENCODERS:
        raise ValueError(f"unknown encoder {encoder!r}; expected one of {ENCODERS}")
    rng = np.random.default_rng(seed)
    scorer = make_scorer(model, dim, store.n_entities, dropout, rng, conve_reshape, conve_channels)
    rel_dim = scorer.relation_dim
    if encoder == "noencoder":
        ent = NoEncoder(store.n_entities, dim, rng)
        rel = NoEncoder(store.n_relations, rel_dim, rng)
    else:
        if vocab is None:
            vocab = build_vocabulary(store)
        # both encoders share one word dimension, even when 5*E widens relations
        if word_dim is None and word_vectors is None:
            word_dim = dim
        ent = GRUEncoder(vocab, dim, word_dim, rng, word_vectors, pooling, freeze_words).bind(store.entities)
        rel = GRUEncoder(vocab, rel_dim, word_dim, rng, word_vectors, pooling, freeze_words).bind(store.relations)
    return KBCModel(ent, rel, scorer, seed)


def model_spec(model: KBCModel) -> dict:
    """The architecture description stored with checkpoints."""
    spec = {
        "model": model.model_kind,
        "encoder": model.encoder_kind,
        "dim": model.dim,
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "conve_reshape": list(model.scorer.reshape) if isinstance(model.scorer, ConvE) else None,
        "conve_channels": model.scorer.channels if isinstance(model.scorer, ConvE) else None,
        "seed": model.seed,
    }
    if model.encoder_kind == "gru":
        enc = model.entity_encoder
        spec.update(word_dim=enc.word_dim, pooling=enc.pooling, words=list(enc.vocab))
    else:
        spec.update(word_dim=None, pooling=None, words=[])
    return spec
