"""Entity and relation encoders: per-id tables or a GRU over name tokens."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .data import WordVectors, tokenize
from .errors import ShapeError
from .tensor import Tensor, get_default_dtype

GRU_INIT = 0.1
GATE_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class NoEncoder:
    """Each item owns a trainable embedding row."""

    kind = "noencoder"

    def __init__(self, n_items: int, dim: int, rng: np.random.Generator | None = None, table=None):
        if table is None:
            table = xavier_uniform(rng or np.random.default_rng(), (n_items, dim))
        self.table = Tensor(table, requires_grad=True)
        if self.table.shape != (n_items, dim):
            raise ShapeError(f"embedding table must be {(n_items, dim)}, got {self.table.shape}")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def n_items(self) -> int:
        return self.table.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {"table": self.table}

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_items):
            raise IndexError(f"unknown id among {ids.min()}..{ids.max()} (have {self.n_items} items)")
        return self.table.take(ids)

    def encode_all(self) -> Tensor:
        return self.table


def gru_step(x: Tensor, h: Tensor, params: dict[str, Tensor]) -> Tensor:
    """One GRU update for ``x`` of shape ``[..., d_w]`` and ``h`` of shape ``[..., d]``."""
    d = params["U_z"].shape[0]
    if h.shape[-1] != d or x.shape[-1] != params["W_z"].shape[0]:
        raise ShapeError(f"gru_step: x {x.shape}, h {h.shape} do not fit W {params['W_z'].shape}, U {params['U_z'].shape}")
    x2 = x.reshape(-1, x.shape[-1])
    h2 = h.reshape(-1, d)
    z = T.sigmoid(x2 @ params["W_z"] + h2 @ params["U_z"] + params["b_z"])
    r = T.sigmoid(x2 @ params["W_r"] + h2 @ params["U_r"] + params["b_r"])
    cand = T.tanh(x2 @ params["W_h"] + (r * h2) @ params["U_h"] + params["b_h"])
    out = (1.0 - z) * h2 + z * cand
    return out.reshape(h.shape)


class GRUEncoder:
    """Single-layer unidirectional GRU over word embeddings of an item's name.

    Call :meth:`bind` with the item names before encoding by id.
    """

    kind = "gru"

    def __init__(
        self,
        vocab: Sequence[str],
        dim: int,
        word_dim: int | None = None,
        rng: np.random.Generator | None = None,
        word_vectors: WordVectors | None = None,
        pooling: str = "last",
        freeze_words: bool = False,
    ):
        rng = rng or np.random.default_rng()
        dtype = get_default_dtype()
        if word_dim is None:
            word_dim = word_vectors.dim if word_vectors is not None else dim
        if word_vectors is not None and word_vectors.dim != word_dim:
            raise ShapeError(f"word vectors have dimension {word_vectors.dim}, encoder expects {word_dim}")
        if pooling not in ("last", "mean"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.vocab = list(vocab)
        self.word_index = {w: i for i, w in enumerate(self.vocab)}
        self.pooling = pooling
        self.freeze_words = freeze_words

        words = rng.standard_normal((len(self.vocab), word_dim)).astype(dtype)
        if word_vectors is not None:
            for i, w in enumerate(self.vocab):
                if w in word_vectors:
                    words[i] = word_vectors[w]
        self.words = Tensor(words, requires_grad=not freeze_words)
        shapes = {
            "W_z": (word_dim, dim), "W_r": (word_dim, dim), "W_h": (word_dim, dim),
            "U_z": (dim, dim), "U_r": (dim, dim), "U_h": (dim, dim),
            "b_z": (dim,), "b_r": (dim,), "b_h": (dim,),
        }
        self.gates = {
            name: Tensor(rng.uniform(-GRU_INIT, GRU_INIT, size=shape).astype(dtype), requires_grad=True)
            for name, shape in shapes.items()
        }
        self.fallback = Tensor(rng.uniform(-GRU_INIT, GRU_INIT, size=dim).astype(dtype), requires_grad=True)
        self._tokens = np.zeros((0, 0), dtype=np.int64)
        self._lengths = np.zeros(0, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.gates["U_z"].shape[0]

    @property
    def word_dim(self) -> int:
        return self.words.shape[1]

    @property
    def n_items(self) -> int:
        return len(self._lengths)

    def parameters(self) -> dict[str, Tensor]:
        params = {"words": self.words} if not self.freeze_words else {}
        params.update(self.gates)
        params["fallback"] = self.fallback
        return params

    def state_tensors(self) -> dict[str, Tensor]:
        """All tensors that define the encoder, trainable or not."""
        params = {"words": self.words}
        params.update(self.gates)
        params["fallback"] = self.fallback
        return params

    def token_ids(self, name: str) -> list[int]:
        try:
            return [self.word_index[w] for w in tokenize(name)]
        except KeyError as exc:
            raise KeyError(f"word {exc.args[0]!r} of name {name!r} is not in the encoder vocabulary") from None

    def bind(self, names: Sequence[str]) -> "GRUEncoder":
        """Fix the item -> token sequence mapping used by :meth:`__call__`."""
        seqs = [self.token_ids(n) for n in names]
        self._tokens, self._lengths = _pad(seqs)
        return self

    def encode_tokens(self, seqs: Sequence[Sequence[int]]) -> Tensor:
        tokens, lengths = _pad(seqs)
        return self._encode(tokens, lengths)

    def encode_name(self, tokens: Sequence[str]) -> Tensor:
        return self.encode_tokens([[self.word_index[w] for w in tokens]]).reshape(self.dim)

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_items):
            raise IndexError(f"unknown id among {ids.min()}..{ids.max()} (have {self.n_items} items)")
        lengths = self._lengths[ids]
        width = int(lengths.max()) if lengths.size else 0
        return self._encode(self._tokens[ids, :width], lengths)

    def encode_all(self) -> Tensor:
        return self(np.arange(self.n_items))

    def _encode(self, tokens: np.ndarray, lengths: np.ndarray) -> Tensor:
        n = len(lengths)
        d = self.dim
        g = self.gates
        # fused input projection for the three gates
        w_in = T.concat([g["W_z"], g["W_r"], g["W_h"]], axis=1)
        u_zr = T.concat([g["U_z"], g["U_r"]], axis=1)
        b_in = T.concat([g["b_z"], g["b_r"], g["b_h"]], axis=0)
        h = Tensor(np.zeros((n, d), dtype=self.words.dtype))
        total = None
        for t in range(tokens.shape[1] if tokens.ndim == 2 else 0):
            active = (lengths > t)[:, None]
            xin = self.words.take(tokens[:, t]) @ w_in + b_in
            hzr = h @ u_zr
            z = T.sigmoid(xin[:, :d] + hzr[:, :d])
            r = T.sigmoid(xin[:, d:2 * d] + hzr[:, d:])
            cand = T.tanh(xin[:, 2 * d:] + (r * h) @ g["U_h"])
            h_new = (1.0 - z) * h + z * cand
            h = T.where(active, h_new, h)
            if self.pooling == "mean":
                step = T.where(active, h_new, np.zeros((), dtype=h.dtype))
                total = step if total is None else total + step
        if self.pooling == "mean" and total is not None:
            h = total / np.maximum(lengths, 1).astype(h.dtype)[:, None]
        if np.any(lengths == 0):
            h = T.where((lengths > 0)[:, None], h, self.fallback.reshape(1, d))
        return h


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max()) if len(lengths) else 0
    tokens = np.zeros((len(seqs), width), dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s
    return tokens, lengths


def encode_batch(ids, mode: str, entity_encoder, relation_encoder) -> Tensor:
    """Encode entity or relation ids with the matching encoder."""
    if mode == "entity":
        return entity_encoder(ids)
    if mode == "relation":
        return relation_encoder(ids)
    raise ValueError(f"mode must be 'entity' or 'relation', got {mode!r}")
