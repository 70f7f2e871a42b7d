"""Initializing fine-tuned models from a GRU-encoder checkpoint.

Unknown rows (new words, entities with no known word, fresh ConvE tail
biases) are drawn from a generator seeded by ``(seed, crc32(name))`` so a
transfer is reproducible and independent of item order.
"""

from __future__ import annotations

import zlib

import numpy as np

from .checkpoint import Checkpoint, relation_dim
from .data import TripleStore, WordVectors, build_vocabulary, tokenize
from .encoders import GRUEncoder
from .errors import TransferError
from .model import KBCModel, build_model
from .tensor import get_default_dtype, no_grad

BIAS_INIT = 0.01
BN_STATS = ("running_mean", "running_var")


def item_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def random_row(seed: int, name: str, dim: int, bound: float) -> np.ndarray:
    return item_rng(seed, name).uniform(-bound, bound, size=dim).astype(get_default_dtype())


def shared_parameter_names(ckpt: Checkpoint, reset_bn: bool = False) -> list[str]:
    """Scorer tensors (without the ``scorer.`` prefix) copied into a fine-tuned model."""
    kind = ckpt.model_kind
    if kind == "5star":
        return []
    names = sorted(ckpt.scorer_tensors())
    if kind == "conve":
        names = [n for n in names if n != "b"]
    if reset_bn:
        names = [n for n in names if n.rsplit(".", 1)[-1] not in BN_STATS]
    return names


def _require_gru(ckpt: Checkpoint) -> None:
    if ckpt.encoder_kind != "gru":
        raise TransferError(f"transfer needs a checkpoint with GRU encoders, got {ckpt.encoder_kind!r}")


def _check_dim(ckpt: Checkpoint, dim: int | None) -> None:
    if dim is not None and dim != ckpt.dim:
        raise TransferError(f"checkpoint dimension {ckpt.dim} differs from requested dimension {dim}")


def transfer_shared_params(ckpt: Checkpoint, model: KBCModel, store: TripleStore, seed: int = 0,
                           reset_bn: bool = False) -> list[str]:
    """Copy the scorer parameters shared between pre-training and fine-tuning.

    Returns the copied names.  ConvE tail biases are re-drawn per entity.
    """
    if model.model_kind != ckpt.model_kind:
        raise TransferError(f"checkpoint holds a {ckpt.model_kind!r} model, target is {model.model_kind!r}")
    _check_dim(ckpt, model.dim)
    names = shared_parameter_names(ckpt, reset_bn)
    source = ckpt.scorer_tensors()
    target = {k[len("scorer."):]: v for k, v in model.state_dict().items() if k.startswith("scorer.")}
    for n in names:
        if target[n].shape != source[n].shape:
            raise TransferError(f"scorer.{n}: checkpoint shape {source[n].shape}, target {target[n].shape}")
    state = {f"scorer.{n}": source[n] for n in names}
    if model.model_kind == "conve":
        state["scorer.b"] = np.array([random_row(seed, "bias:" + e, 1, BIAS_INIT)[0] for e in store.entities],
                                     dtype=get_default_dtype())
    model.load_state_dict(state, strict=False)
    return names


def _source_encoder(ckpt: Checkpoint, prefix: str, dim: int) -> GRUEncoder:
    m = ckpt.manifest
    enc = GRUEncoder(m["words"], dim, m["word_dim"], np.random.default_rng(0), pooling=m.get("pooling") or "last")
    for name, t in enc.state_tensors().items():
        t.data = np.array(ckpt.tensors[f"{prefix}.{name}"], dtype=t.dtype)
    return enc


def _build_target(ckpt: Checkpoint, encoder: str, store: TripleStore, vocab, seed: int, dropout: float,
                  freeze_words: bool = False) -> KBCModel:
    m = ckpt.manifest
    return build_model(
        m["model"], encoder, m["dim"], store, vocab=vocab, word_dim=m["word_dim"], dropout=dropout,
        conve_reshape=m["conve_reshape"], conve_channels=m.get("conve_channels") or 32,
        pooling=m.get("pooling") or "last", freeze_words=freeze_words, seed=seed,
    )


def init_finetune_gru(
    ckpt: Checkpoint,
    store: TripleStore,
    seed: int = 0,
    dim: int | None = None,
    dropout: float = 0.0,
    word_vectors: WordVectors | None = None,
    reset_bn: bool = False,
    freeze_words: bool = False,
) -> KBCModel:
    """GRU model over ``store`` with gates, known word rows and shared scorer parameters copied.

    The vocabulary is the target store's own.  Words new to the checkpoint
    take a pre-trained vector from ``word_vectors`` when available, else a
    seeded normal row.
    """
    _require_gru(ckpt)
    _check_dim(ckpt, dim)
    vocab = build_vocabulary(store)
    source_index = {w: i for i, w in enumerate(ckpt.words)}
    model = _build_target(ckpt, "gru", store, vocab, seed, dropout, freeze_words)
    state = {}
    for prefix in ("entity_encoder", "relation_encoder"):
        src_words = ckpt.tensors[f"{prefix}.words"]
        words = np.empty((len(vocab), src_words.shape[1]), dtype=get_default_dtype())
        for i, w in enumerate(vocab):
            if w in source_index:
                words[i] = src_words[source_index[w]]
            elif word_vectors is not None and w in word_vectors:
                words[i] = word_vectors[w]
            else:
                words[i] = item_rng(seed, f"{prefix}:{w}").standard_normal(src_words.shape[1])
        state[f"{prefix}.words"] = words
        for k, v in ckpt.tensors.items():
            if k.startswith(prefix + ".") and not k.endswith(".words"):
                state[k] = v
    model.load_state_dict(state, strict=False)
    transfer_shared_params(ckpt, model, store, seed, reset_bn)
    return model


def encode_names(encoder: GRUEncoder, names, seed: int, bound: float, tag: str) -> np.ndarray:
    """One row per name: the encoding of its known words, or a seeded random row."""
    rows = np.empty((len(names), encoder.dim), dtype=get_default_dtype())
    with no_grad():
        for i, name in enumerate(names):
            known = [w for w in tokenize(name) if w in encoder.word_index]
            if known:
                rows[i] = encoder.encode_name(known).data
            else:
                rows[i] = random_row(seed, f"{tag}:{name}", encoder.dim, bound)
    return rows


def init_finetune_noencoder(
    ckpt: Checkpoint,
    store: TripleStore,
    seed: int = 0,
    dim: int | None = None,
    dropout: float = 0.0,
    reset_bn: bool = False,
) -> KBCModel:
    """NoEncoder model whose tables hold the pre-trained GRU encodings of the names.

    Unknown words are dropped; names with no known word get a random row.
    """
    _require_gru(ckpt)
    _check_dim(ckpt, dim)
    model = _build_target(ckpt, "noencoder", store, None, seed, dropout)
    d, rd = ckpt.dim, relation_dim(ckpt.manifest)
    ent = _source_encoder(ckpt, "entity_encoder", d)
    rel = _source_encoder(ckpt, "relation_encoder", rd)
    state = {
        "entity_encoder.table": encode_names(ent, store.entities, seed, np.sqrt(6.0 / (store.n_entities + d)),
                                             "entity"),
        "relation_encoder.table": encode_names(rel, store.relations, seed,
                                               np.sqrt(6.0 / (store.n_relations + rd)), "relation"),
    }
    model.load_state_dict(state, strict=False)
    transfer_shared_params(ckpt, model, store, seed, reset_bn)
    return model


def init_finetune(ckpt: Checkpoint, store: TripleStore, encoder: str, **kwargs) -> KBCModel:
    if encoder == "gru":
        return init_finetune_gru(ckpt, store, **kwargs)
    if encoder == "noencoder":
        kwargs.pop("word_vectors", None)
        kwargs.pop("freeze_words", None)
        return init_finetune_noencoder(ckpt, store, **kwargs)
    raise ValueError(f"unknown encoder {encoder!r}")
