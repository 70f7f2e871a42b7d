import numpy as np
import pytest

from kbctransfer import tensor as T
from kbctransfer.encoders import GATE_NAMES, GRUEncoder, NoEncoder, encode_batch, gru_step
from kbctransfer.errors import ShapeError
from kbctransfer.tensor import Tensor

VOCAB = ["the", "uk", "lived", "in", "barack", "obama"]


def zero_params(d_w, d):
    shapes = {"W": (d_w, d), "U": (d, d), "b": (d,)}
    return {name: Tensor(np.zeros(shapes[name[0]])) for name in GATE_NAMES}


def scalar_gru(x, h, p):
    """Unit-by-unit reference GRU step."""
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    d = len(h)
    W = {k: p[k].data for k in p}
    z = [sig(sum(x[i] * W["W_z"][i, j] for i in range(len(x))) + sum(h[i] * W["U_z"][i, j] for i in range(d))
             + W["b_z"][j]) for j in range(d)]
    r = [sig(sum(x[i] * W["W_r"][i, j] for i in range(len(x))) + sum(h[i] * W["U_r"][i, j] for i in range(d))
             + W["b_r"][j]) for j in range(d)]
    cand = [np.tanh(sum(x[i] * W["W_h"][i, j] for i in range(len(x)))
                    + sum(r[i] * h[i] * W["U_h"][i, j] for i in range(d)) + W["b_h"][j]) for j in range(d)]
    return np.array([(1 - z[j]) * h[j] + z[j] * cand[j] for j in range(d)])


def test_gru_step_zero_parameters():
    p = zero_params(3, 4)
    h = Tensor(np.array([1.0, -2.0, 4.0, 0.5]))
    np.testing.assert_allclose(gru_step(Tensor(np.ones(3)), h, p).data, 0.5 * h.data)
    np.testing.assert_array_equal(gru_step(Tensor(np.ones(3)), Tensor(np.zeros(4)), p).data, 0.0)


def test_gru_step_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    with T.default_dtype(np.float64):
        enc = GRUEncoder(VOCAB, 5, word_dim=3, rng=rng)
        x, h = rng.standard_normal(3), rng.standard_normal(5)
        got = gru_step(Tensor(x), Tensor(h), enc.gates).data
    np.testing.assert_allclose(got, scalar_gru(x, h, enc.gates), atol=1e-6)


def test_gru_step_shape_mismatch():
    with pytest.raises(ShapeError):
        gru_step(Tensor(np.ones(2)), Tensor(np.ones(4)), zero_params(3, 4))


def test_encode_name_runs_the_step_left_to_right():
    rng = np.random.default_rng(1)
    with T.default_dtype(np.float64):
        enc = GRUEncoder(VOCAB, 4, word_dim=3, rng=rng)
        h = Tensor(np.zeros(4))
        for w in ["lived", "in", "the", "uk"]:
            h = gru_step(enc.words.take([VOCAB.index(w)]).reshape(3), h, enc.gates)
        np.testing.assert_allclose(enc.encode_name(["lived", "in", "the", "uk"]).data, h.data, atol=1e-12)
        a = enc.encode_name(["the", "uk"]).data
        assert not np.allclose(a, enc.encode_name(["uk"]).data)
        np.testing.assert_array_equal(a, enc.encode_name(["the", "uk"]).data)


def test_single_token_zero_parameters_gives_zero():
    enc = GRUEncoder(VOCAB, 4, rng=np.random.default_rng(0))
    for t in enc.gates.values():
        t.data[...] = 0
    np.testing.assert_array_equal(enc.encode_name(["uk"]).data, 0.0)


@pytest.mark.parametrize("pooling", ["last", "mean"])
def test_batched_encoding_equals_per_item(pooling):
    names = ["barack obama", "the uk", "lived in the uk", "uk", "in"]
    enc = GRUEncoder(VOCAB, 6, word_dim=4, rng=np.random.default_rng(2), pooling=pooling).bind(names)
    batched = enc.encode_all().data
    for i, name in enumerate(names):
        single = enc.encode_name(name.split()).data
        np.testing.assert_allclose(batched[i], single, atol=1e-6)
    np.testing.assert_allclose(enc([4, 0]).data, batched[[4, 0]], atol=1e-6)


def test_mean_pooling_averages_hidden_states():
    enc = GRUEncoder(VOCAB, 3, rng=np.random.default_rng(3), pooling="mean")
    states = []
    h = Tensor(np.zeros(3, dtype=np.float32))
    for w in ["the", "uk"]:
        h = gru_step(enc.words.take([VOCAB.index(w)]).reshape(3), h, enc.gates)
        states.append(h.data)
    np.testing.assert_allclose(enc.encode_name(["the", "uk"]).data, np.mean(states, axis=0), atol=1e-6)


def test_empty_name_uses_fallback():
    enc = GRUEncoder(VOCAB, 4, rng=np.random.default_rng(0)).bind(["", "uk"])
    np.testing.assert_array_equal(enc([0]).data[0], enc.fallback.data)


def test_unknown_word_and_id():
    enc = GRUEncoder(VOCAB, 4, rng=np.random.default_rng(0))
    with pytest.raises(KeyError, match="zxqv"):
        enc.bind(["zxqv uk"])
    enc.bind(["uk"])
    with pytest.raises(IndexError):
        enc([1])


def test_word_vectors_initialize_rows():
    from kbctransfer.data import WordVectors
    wv = WordVectors({"uk": 0}, np.array([[1.0, 2.0, 3.0]]))
    enc = GRUEncoder(VOCAB, 4, rng=np.random.default_rng(0), word_vectors=wv)
    assert enc.word_dim == 3
    np.testing.assert_array_equal(enc.words.data[VOCAB.index("uk")], [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        GRUEncoder(VOCAB, 4, word_dim=5, word_vectors=wv)


def test_frozen_words_are_not_parameters():
    enc = GRUEncoder(VOCAB, 4, rng=np.random.default_rng(0), freeze_words=True)
    assert "words" not in enc.parameters()
    assert "words" in enc.state_tensors()


def test_no_encoder_lookup_and_errors():
    table = np.arange(20, dtype=np.float32).reshape(5, 4)
    enc = NoEncoder(5, 4, table=table)
    np.testing.assert_array_equal(enc([3]).data[0], table[3])
    with pytest.raises(IndexError):
        enc([5])
    with pytest.raises(ShapeError):
        NoEncoder(4, 4, table=table)


def test_entity_and_relation_encoders_are_separate():
    rng = np.random.default_rng(0)
    ents = GRUEncoder(VOCAB, 4, rng=rng).bind(["the uk"])
    rels = GRUEncoder(VOCAB, 4, rng=rng).bind(["lived in"])
    before = encode_batch([0], "relation", ents, rels).data.copy()
    for t in ents.state_tensors().values():
        t.data = t.data + 1.0
    np.testing.assert_array_equal(encode_batch([0], "relation", ents, rels).data, before)
    with pytest.raises(ValueError):
        encode_batch([0], "word", ents, rels)


def test_gradients_reach_word_embeddings():
    from kbctransfer.gradcheck import check_gradients
    rng = np.random.default_rng(4)
    with T.default_dtype(np.float64):
        enc = GRUEncoder(VOCAB, 3, word_dim=2, rng=rng).bind(["the uk", "lived in the uk", "uk"])
        w = rng.standard_normal((3, 3))
        errs = check_gradients(lambda: (enc.encode_all() * w).sum(), enc.parameters(), rng)
    assert set(errs) >= {"words", "W_z", "U_h", "b_r"}
    assert max(errs.values()) < 1e-4
