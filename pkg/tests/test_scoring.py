import numpy as np
import pytest

from kbctransfer import tensor as T
from kbctransfer.errors import ShapeError
from kbctransfer.scoring import (ConvE, FiveStar, TuckER, conve_shape, make_scorer, n3_penalty, score_5star,
                                 score_tucker)
from kbctransfer.tensor import Tensor


def t64(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# -- TuckER ----------------------------------------------------------------------
def test_tucker_rank_one_core():
    got = score_tucker(Tensor([[2.0]]), Tensor([[3.0]]), Tensor([[4.0]]), Tensor(np.full((1, 1, 1), 0.5)))
    assert got.data[0, 0] == 12.0


def test_tucker_zero_core():
    rng = np.random.default_rng(0)
    got = score_tucker(Tensor(rng.random((2, 3))), Tensor(rng.random((2, 3))), Tensor(rng.random((4, 3))),
                       Tensor(np.zeros((3, 3, 3))))
    assert np.all(got.data == 0)


def test_tucker_matches_loop_oracle_and_is_equivariant():
    rng = np.random.default_rng(1)
    d, b, n = 2, 3, 4
    W, h, r, t = rng.standard_normal((d, d, d)), rng.standard_normal((b, d)), rng.standard_normal((b, d)), \
        rng.standard_normal((n, d))
    oracle = np.zeros((b, n))
    for i in range(b):
        for j in range(n):
            oracle[i, j] = sum(W[p, q, s] * h[i, p] * r[i, s] * t[j, q]
                               for p in range(d) for q in range(d) for s in range(d))
    with T.default_dtype(np.float64):
        got = score_tucker(Tensor(h), Tensor(r), Tensor(t), Tensor(W)).data
        perm = rng.permutation(n)
        permuted = score_tucker(Tensor(h), Tensor(r), Tensor(t[perm]), Tensor(W)).data
    np.testing.assert_allclose(got, oracle, atol=1e-5)
    np.testing.assert_allclose(permuted, got[:, perm], atol=1e-12)


def test_tucker_eval_mode_reduces_to_contraction():
    rng = np.random.default_rng(2)
    with T.default_dtype(np.float64):
        model = TuckER(3, dropout=0.4, rng=rng)
        h, r, t = (Tensor(rng.standard_normal(s)) for s in ((2, 3), (2, 3), (5, 3)))
        # fresh running stats are mean 0 / var 1, so eval batch norm is identity up to eps
        got = model(h, r, t, training=False).data
        pure = score_tucker(h, r, t, model.W).data
    np.testing.assert_allclose(got, pure / (1 + 1e-5), rtol=1e-6)


def test_tucker_dimension_mismatch():
    with pytest.raises(ShapeError):
        TuckER(3, rng=np.random.default_rng(0))(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3))),
                                                 Tensor(np.ones((2, 3))))


# -- ConvE -----------------------------------------------------------------------
def test_conve_reshape_table():
    assert conve_shape(300) == (15, 20)
    assert conve_shape(500) == (20, 25)
    assert conve_shape(12, (3, 4)) == (3, 4)
    with pytest.raises(ShapeError):
        conve_shape(64)
    with pytest.raises(ShapeError):
        conve_shape(12, (5, 4))


def test_conve_zero_network_gives_bias_logits():
    rng = np.random.default_rng(0)
    model = ConvE(12, 5, (3, 4), channels=4, rng=rng)
    model.conv_weight.data[...] = 0
    model.fc_weight.data[...] = 0
    model.fc_bias.data[...] = 0
    model.b.data = rng.standard_normal(5).astype(np.float32)
    h, r, t = (Tensor(rng.standard_normal(s).astype(np.float32)) for s in ((3, 12), (3, 12), (5, 12)))
    for training in (False, True):
        got = model(h, r, t, training=training, rng=rng).data
        np.testing.assert_allclose(got, np.broadcast_to(model.b.data, (3, 5)), atol=1e-6)


def test_conve_unit_tails_expose_features():
    rng = np.random.default_rng(1)
    model = ConvE(12, 12, (3, 4), channels=4, rng=rng)
    h, r = Tensor(rng.standard_normal((2, 12))), Tensor(rng.standard_normal((2, 12)))
    f = model.features(h, r).data
    np.testing.assert_allclose(model(h, r, Tensor(np.eye(12, dtype=np.float32))).data, f, atol=1e-6)


def conve_oracle(model, h, r, t):
    """Eval-mode ConvE assembled from the loop convolution and plain numpy."""
    from test_tensor import naive_conv

    def bn(x, layer, axis_shape):
        mean = layer.running_mean.reshape(axis_shape)
        var = layer.running_var.reshape(axis_shape)
        return (x - mean) / np.sqrt(var + layer.eps) * layer.weight.data.reshape(axis_shape) \
            + layer.bias.data.reshape(axis_shape)

    rows, cols = model.reshape
    out = []
    for i in range(len(h)):
        img = np.concatenate([h[i].reshape(rows, cols), r[i].reshape(rows, cols)])[None]
        img = bn(img, model.bn0, (1, 1, 1))
        x = naive_conv(img, model.conv_weight.data, model.conv_bias.data)
        x = np.maximum(bn(x, model.bn1, (-1, 1, 1)), 0)
        x = x.reshape(-1) @ model.fc_weight.data + model.fc_bias.data
        x = np.maximum(bn(x, model.bn2, (-1,)), 0)
        out.append(x @ t.T + model.b.data)
    return np.array(out)


def test_conve_matches_composed_oracle():
    rng = np.random.default_rng(2)
    with T.default_dtype(np.float64):
        model = ConvE(12, 6, (3, 4), channels=3, rng=rng)
        for layer in model.bn_layers().values():
            layer.running_mean = rng.standard_normal(layer.num_features) * 0.1
            layer.running_var = rng.random(layer.num_features) + 0.5
            layer.weight.data = rng.standard_normal(layer.num_features)
        model.b.data = rng.standard_normal(6)
        h, r, t = rng.standard_normal((4, 12)), rng.standard_normal((4, 12)), rng.standard_normal((6, 12))
        got = model(Tensor(h), Tensor(r), Tensor(t), training=False).data
    np.testing.assert_allclose(got, conve_oracle(model, h, r, t), atol=1e-5)


def test_conve_eval_is_deterministic_and_tail_ids_select_biases():
    rng = np.random.default_rng(3)
    model = ConvE(12, 6, (3, 4), channels=2, dropout=0.5, rng=rng)
    model.b.data = np.arange(6, dtype=np.float32)
    h, r, t = Tensor(rng.standard_normal((2, 12))), Tensor(rng.standard_normal((2, 12))), \
        Tensor(rng.standard_normal((6, 12)))
    a = model(h, r, t, training=False).data
    np.testing.assert_array_equal(a, model(h, r, t, training=False).data)
    sub = model(h, r, t.take([4, 1]), tail_ids=np.array([4, 1]), training=False).data
    np.testing.assert_allclose(sub, a[:, [4, 1]], atol=1e-6)
    with pytest.raises(ShapeError):
        model(h, r, t.take([4, 1]), training=False)


# -- 5*E -------------------------------------------------------------------------
def to_layout(z_pairs):
    """(b, 2, K) complex -> [Re z1, Im z1, Re z2, Im z2] real rows."""
    return np.concatenate([z_pairs[:, 0].real, z_pairs[:, 0].imag, z_pairs[:, 1].real, z_pairs[:, 1].imag], axis=1)


def rel_layout(mats):
    """(b, K, 2, 2) complex -> [a, b, c, d] as (Re, Im) blocks."""
    parts = []
    for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)):
        parts += [mats[:, :, i, j].real, mats[:, :, i, j].imag]
    return np.concatenate(parts, axis=1)


def test_5star_identity_relation():
    K = 3
    ent = np.zeros((1, 2, K), dtype=complex)
    ent[:, 0] = 1.0
    eye = np.broadcast_to(np.eye(2, dtype=complex), (1, K, 2, 2))
    got = score_5star(Tensor(to_layout(ent)), Tensor(rel_layout(eye)), Tensor(to_layout(ent)))
    assert got.data[0, 0] == K


def test_5star_zero_relation():
    rng = np.random.default_rng(0)
    got = score_5star(Tensor(rng.standard_normal((2, 8))), Tensor(np.zeros((2, 16))), Tensor(rng.standard_normal((3, 8))))
    assert np.all(got.data == 0)


def test_5star_matches_complex_oracle_and_is_linear_in_relation():
    rng = np.random.default_rng(1)
    K, b, n = 2, 3, 4
    cplx = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)
    h, t, M = cplx(b, 2, K), cplx(n, 2, K), cplx(b, K, 2, 2)
    oracle = np.zeros((b, n))
    for i in range(b):
        for j in range(n):
            total = 0.0
            for k in range(K):
                u1 = M[i, k, 0, 0] * h[i, 0, k] + M[i, k, 0, 1] * h[i, 1, k]
                u2 = M[i, k, 1, 0] * h[i, 0, k] + M[i, k, 1, 1] * h[i, 1, k]
                total += (u1 * np.conj(t[j, 0, k]) + u2 * np.conj(t[j, 1, k])).real
            oracle[i, j] = total
    with T.default_dtype(np.float64):
        got = score_5star(Tensor(to_layout(h)), Tensor(rel_layout(M)), Tensor(to_layout(t))).data
        scaled = score_5star(Tensor(to_layout(h)), Tensor(2.5 * rel_layout(M)), Tensor(to_layout(t))).data
    np.testing.assert_allclose(got, oracle, atol=1e-6)
    np.testing.assert_allclose(scaled, 2.5 * got, rtol=1e-12)


def test_5star_layout_errors():
    with pytest.raises(ShapeError):
        FiveStar(6)
    with pytest.raises(ShapeError):
        score_5star(Tensor(np.ones((1, 8))), Tensor(np.ones((1, 8))), Tensor(np.ones((2, 8))))
    assert FiveStar(8).relation_dim == 16 and FiveStar(8).parameters() == {}


# -- N3 --------------------------------------------------------------------------
def test_n3_examples():
    assert n3_penalty([Tensor([2.0, -1.0])], 0.0).item() == 0.0
    assert abs(n3_penalty([Tensor([2.0])], 0.1).item() - 0.8) < 1e-6
    assert abs(n3_penalty([(Tensor([3.0]), Tensor([4.0]))], 1.0).item() - 125.0) < 1e-4
    with pytest.raises(ValueError):
        n3_penalty([Tensor([1.0])], -0.1)


def test_n3_gradient():
    from kbctransfer.gradcheck import check_gradients
    rng = np.random.default_rng(0)
    with T.default_dtype(np.float64):
        a, re, im = t64(rng.standard_normal(5)), t64(rng.standard_normal(4)), t64(rng.standard_normal(4))
        errs = check_gradients(lambda: n3_penalty([a, (re, im)], 0.3), {"a": a, "re": re, "im": im}, rng)
    assert max(errs.values()) < 1e-4


# -- shared properties -----------------------------------------------------------
@pytest.mark.parametrize("kind", ["tucker", "conve", "5star"])
def test_batch_scoring_equals_row_by_row(kind):
    rng = np.random.default_rng(5)
    with T.default_dtype(np.float64):
        scorer = make_scorer(kind, 12, 7, 0.0, rng, (3, 4), 4)
        rd = scorer.relation_dim
        h, r, t = Tensor(rng.standard_normal((4, 12))), Tensor(rng.standard_normal((4, rd))), \
            Tensor(rng.standard_normal((7, 12)))
        full = scorer(h, r, t, training=False).data
        rows = [scorer(h[i:i + 1], r[i:i + 1], t, training=False).data[0] for i in range(4)]
    np.testing.assert_allclose(full, np.array(rows), atol=1e-10)


def test_make_scorer_rejects_unknown():
    with pytest.raises(ValueError):
        make_scorer("transe", 4, 3)
