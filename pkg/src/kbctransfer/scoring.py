"""TuckER, ConvE and 5*E scorers in 1-N form.

Each scorer maps head embeddings ``[b, d]``, relation embeddings
``[b, d_r]`` and candidate tail embeddings ``[N, d]`` to logits ``[b, N]``.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import BatchNorm, Tensor, get_default_dtype

CONVE_RESHAPE = {300: (15, 20), 500: (20, 25)}


def _f(x):
    return np.asarray(x, dtype=get_default_dtype())


def score_tucker(v_h: Tensor, v_r: Tensor, tails: Tensor, W: Tensor) -> Tensor:
    """``logits[i, j] = sum_{p,q,s} W[p, q, s] h[i, p] r[i, s] t[j, q]``."""
    d = W.shape[0]
    if W.shape != (d, d, d) or v_h.shape[-1] != d or v_r.shape[-1] != d or tails.shape[-1] != d:
        raise ShapeError(f"tucker: W {W.shape}, h {v_h.shape}, r {v_r.shape}, tails {tails.shape}")
    core = _relation_core(v_r, W)
    x = (v_h.reshape(-1, 1, d) @ core).reshape(-1, d)
    return x @ tails.T


def _relation_core(v_r: Tensor, W: Tensor) -> Tensor:
    d = W.shape[0]
    # core[b, p, q] = sum_s r[b, s] W[p, q, s]
    return (v_r @ W.transpose(2, 0, 1).reshape(d, d * d)).reshape(-1, d, d)


class TuckER:
    kind = "tucker"

    def __init__(self, dim: int, dropout: float = 0.0, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.dim = dim
        self.dropout = dropout
        self.W = Tensor(_f(rng.uniform(-1.0, 1.0, size=(dim, dim, dim))), requires_grad=True)
        self.bn0 = BatchNorm(dim)
        self.bn1 = BatchNorm(dim)

    relation_dim = property(lambda self: self.dim)

    def parameters(self) -> dict[str, Tensor]:
        params = {"W": self.W}
        for bn in ("bn0", "bn1"):
            for k, v in getattr(self, bn).parameters().items():
                params[f"{bn}.{k}"] = v
        return params

    def bn_layers(self) -> dict[str, BatchNorm]:
        return {"bn0": self.bn0, "bn1": self.bn1}

    def __call__(self, v_h, v_r, tails, tail_ids=None, training=False, rng=None) -> Tensor:
        d = self.dim
        if v_h.shape[-1] != d or v_r.shape[-1] != d or tails.shape[-1] != d:
            raise ShapeError(f"tucker expects dimension {d}: h {v_h.shape}, r {v_r.shape}, tails {tails.shape}")
        x = self.bn0(v_h, training)
        x = T.dropout(x, self.dropout, training, rng)
        core = T.dropout(_relation_core(v_r, self.W), self.dropout, training, rng)
        x = (x.reshape(-1, 1, d) @ core).reshape(-1, d)
        x = self.bn1(x, training)
        x = T.dropout(x, self.dropout, training, rng)
        return x @ tails.T


def conve_shape(dim: int, reshape=None) -> tuple[int, int]:
    if reshape is not None:
        rows, cols = (int(v) for v in reshape)
        if rows * cols != dim:
            raise ShapeError(f"ConvE reshape {rows}x{cols} does not hold {dim} values")
        return rows, cols
    if dim not in CONVE_RESHAPE:
        raise ShapeError(f"no ConvE reshape configured for dimension {dim}; pass rows x cols explicitly")
    return CONVE_RESHAPE[dim]


class ConvE:
    kind = "conve"

    def __init__(self, dim: int, n_entities: int, reshape=None, channels: int = 32,
                 dropout: float = 0.0, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.dim = dim
        self.rows, self.cols = conve_shape(dim, reshape)
        self.channels = channels
        self.dropout = dropout
        flat = channels * 2 * self.rows * self.cols
        k_bound = 1.0 / np.sqrt(9)
        f_bound = 1.0 / np.sqrt(flat)
        self.bn0 = BatchNorm(1)
        self.conv_weight = Tensor(_f(rng.uniform(-k_bound, k_bound, (channels, 1, 3, 3))), requires_grad=True)
        self.conv_bias = Tensor(_f(rng.uniform(-k_bound, k_bound, channels)), requires_grad=True)
        self.bn1 = BatchNorm(channels)
        self.fc_weight = Tensor(_f(rng.uniform(-f_bound, f_bound, (flat, dim))), requires_grad=True)
        self.fc_bias = Tensor(_f(rng.uniform(-f_bound, f_bound, dim)), requires_grad=True)
        self.bn2 = BatchNorm(dim)
        self.b = Tensor(_f(np.zeros(n_entities)), requires_grad=True)

    relation_dim = property(lambda self: self.dim)

    @property
    def reshape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def parameters(self) -> dict[str, Tensor]:
        params = {
            "conv.weight": self.conv_weight,
            "conv.bias": self.conv_bias,
            "fc.weight": self.fc_weight,
            "fc.bias": self.fc_bias,
            "b": self.b,
        }
        for name, bn in self.bn_layers().items():
            for k, v in bn.parameters().items():
                params[f"{name}.{k}"] = v
        return params

    def bn_layers(self) -> dict[str, BatchNorm]:
        return {"bn0": self.bn0, "bn1": self.bn1, "bn2": self.bn2}

    def features(self, v_h, v_r, training=False, rng=None) -> Tensor:
        """The ``d``-dimensional CNN output for each (head, relation) row."""
        d, rows, cols = self.dim, self.rows, self.cols
        if v_h.shape[-1] != d or v_r.shape[-1] != d:
            raise ShapeError(f"conve expects dimension {d}: h {v_h.shape}, r {v_r.shape}")
        b = v_h.shape[0]
        x = T.concat([v_h.reshape(b, 1, rows, cols), v_r.reshape(b, 1, rows, cols)], axis=2)
        x = self.bn0(x, training)
        x = T.dropout(x, self.dropout, training, rng)
        x = T.conv2d(x, self.conv_weight, self.conv_bias)
        x = self.bn1(x, training)
        x = T.relu(x)
        x = T.dropout(x, self.dropout, training, rng)
        x = x.reshape(b, -1) @ self.fc_weight + self.fc_bias
        x = T.dropout(x, self.dropout, training, rng)
        x = self.bn2(x, training)
        return T.relu(x)

    def __call__(self, v_h, v_r, tails, tail_ids=None, training=False, rng=None) -> Tensor:
        if tails.shape[-1] != self.dim:
            raise ShapeError(f"conve expects tails of dimension {self.dim}, got {tails.shape}")
        if tail_ids is None:
            if tails.shape[0] != self.b.shape[0]:
                raise ShapeError(f"{tails.shape[0]} tails but {self.b.shape[0]} tail biases; pass tail_ids")
            bias = self.b
        else:
            bias = self.b.take(tail_ids)
        return score_conve_features(self.features(v_h, v_r, training, rng), tails, bias)


def score_conve_features(features: Tensor, tails: Tensor, biases: Tensor) -> Tensor:
    return features @ tails.T + biases


def complex_blocks(v: Tensor, n_numbers: int) -> list[tuple[Tensor, Tensor]]:
    """Split ``[b, 2*n*K]`` into ``n`` complex vectors ``(re, im)`` of width ``K``."""
    width = v.shape[-1]
    if width % (2 * n_numbers):
        raise ShapeError(f"width {width} is not a multiple of {2 * n_numbers}")
    K = width // (2 * n_numbers)
    return [(v[..., (2 * i) * K:(2 * i + 1) * K], v[..., (2 * i + 1) * K:(2 * i + 2) * K]) for i in range(n_numbers)]


def score_5star(v_h: Tensor, v_r: Tensor, tails: Tensor) -> Tensor:
    """Relation-wise Moebius action on complex coordinate pairs, then a Hermitian product.

    Entity layout per row: ``[Re h1, Im h1, Re h2, Im h2]`` (K each);
    relation layout: ``[a, b, c, d]`` as (Re, Im) blocks of K each.
    """
    d = v_h.shape[-1]
    if d % 4 or v_r.shape[-1] != 2 * d or tails.shape[-1] != d:
        raise ShapeError(f"5*E layout: h {v_h.shape}, r {v_r.shape} (need 2x), tails {tails.shape}")
    h1, h2 = complex_blocks(v_h, 2)
    a, b, c, dd = complex_blocks(v_r, 4)
    u1 = _cadd(T.complex_mul(a, h1), T.complex_mul(b, h2))
    u2 = _cadd(T.complex_mul(c, h1), T.complex_mul(dd, h2))
    u = T.concat([u1[0], u1[1], u2[0], u2[1]], axis=1)
    return u @ tails.T


def _cadd(x, y):
    return x[0] + y[0], x[1] + y[1]


class FiveStar:
    kind = "5star"

    def __init__(self, dim: int):
        if dim % 4:
            raise ShapeError(f"5*E needs a dimension divisible by 4, got {dim}")
        self.dim = dim

    relation_dim = property(lambda self: 2 * self.dim)

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def bn_layers(self) -> dict[str, BatchNorm]:
        return {}

    def __call__(self, v_h, v_r, tails, tail_ids=None, training=False, rng=None) -> Tensor:
        return score_5star(v_h, v_r, tails)


def n3_penalty(factors, weight: float) -> Tensor:
    """``weight * sum |x|^3``; ``(re, im)`` pairs contribute their modulus cubed."""
    if weight < 0:
        raise ValueError(f"N3 weight must be non-negative, got {weight}")
    total = None
    for f in factors:
        if isinstance(f, tuple):
            re, im = f
            term = T.power(re * re + im * im, 1.5).sum()
        else:
            f = T.as_tensor(f)
            term = T.power(T.tabs(f), 3.0).sum()
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros(()))
    return total * weight


def five_star_factors(v_h: Tensor, v_r: Tensor, v_t: Tensor) -> list:
    return complex_blocks(v_h, 2) + complex_blocks(v_r, 4) + complex_blocks(v_t, 2)


def make_scorer(kind: str, dim: int, n_entities: int, dropout: float = 0.0, rng=None,
                conve_reshape=None, conve_channels: int = 32):
    if kind == "tucker":
        return TuckER(dim, dropout, rng)
    if kind == "conve":
        return ConvE(dim, n_entities, conve_reshape, conve_channels, dropout, rng)
    if kind == "5star":
        return FiveStar(dim)
    raise ValueError(f"unknown model {kind!r}; expected tucker, conve or 5star")
