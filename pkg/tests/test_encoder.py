import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiersum import tensor as T
from hiersum.encoder import (PRESETS, ModelConfig, copy_params, document_encoder, encode_document,
                             encode_documents, encode_sentence, encoder_layer, init_params,
                             multi_head_attention, param_shapes, sincos_position, sincos_table, sub)
from hiersum.tensor import Tensor
from hiersum.text import EOS, PAD, Document

CFG = ModelConfig(vocab_size=30, dropout=0.1)


@pytest.fixture(scope="module")
def params():
    return init_params(CFG, np.random.default_rng(0))


def random_doc(rng, n_sent=None, max_len=8):
    n = n_sent or int(rng.integers(1, 6))
    return Document([list(rng.integers(5, CFG.vocab_size, size=rng.integers(1, max_len))) + [EOS]
                     for _ in range(n)])


def zero_sublayers(params, stack):
    p = copy_params(params)
    for name, t in p.items():
        if name.startswith(stack + ".") and (".attn." in name or ".ff." in name):
            t.data[...] = 0.0
    return p


class TestConfig:
    def test_presets(self):
        assert {k: tuple(v) for k, v in PRESETS.items()} == {
            "tiny": (2, 64, 4), "small": (6, 512, 8), "medium": (6, 768, 12)}
        small = ModelConfig.preset("small", 1000)
        assert small.ff == 4 * 512

    def test_invalid(self):
        with pytest.raises(ValueError):
            ModelConfig(hidden=30, heads=4)
        with pytest.raises(ValueError):
            ModelConfig(hidden=63, heads=1)

    def test_large_shapes_constructible(self):
        shapes = param_shapes(ModelConfig.preset("medium", 500))
        assert shapes["sent.5.attn.wq"] == (768, 768) and shapes["doc.0.ff.w1"] == (768, 3072)

    def test_init_statistics(self):
        p = init_params(ModelConfig(vocab_size=2000), np.random.default_rng(1))
        assert abs(p["embed.w"].data.std() - 0.02) < 0.002
        assert np.all(p["sent.0.ln1.g"].data == 1.0) and not p["sent.0.ff.b1"].data.any()
        bound = np.sqrt(6.0 / (64 + 256))
        assert np.abs(p["sent.0.ff.w1"].data).max() <= bound


class TestPositions:
    def test_zero(self):
        np.testing.assert_array_equal(sincos_position(0, 6), [0, 1, 0, 1, 0, 1])

    def test_pos1_d2(self):
        np.testing.assert_allclose(sincos_position(1, 2), [np.sin(1), np.cos(1)], atol=1e-15)

    @given(st.integers(0, 500), st.integers(1, 32))
    def test_range(self, pos, half):
        v = sincos_position(pos, 2 * half)
        assert v.shape == (2 * half,) and np.all(np.abs(v) <= 1.0)

    def test_table_matches(self):
        table = sincos_table(10, 8)
        for p in range(10):
            np.testing.assert_array_equal(table[p], sincos_position(p, 8))


class TestAttention:
    W = {k: Tensor(np.random.default_rng(i).normal(size=(8, 8))) for i, k in enumerate(("wq", "wk", "wv", "wo"))}

    def test_single_key(self):
        rng = np.random.default_rng(0)
        v = Tensor(rng.normal(size=(1, 8)))
        expected = v.data @ self.W["wv"].data @ self.W["wo"].data
        for _ in range(3):
            q = Tensor(rng.normal(size=(3, 8)))
            out = multi_head_attention(q, v, v, None, self.W, 2).data
            np.testing.assert_allclose(out, np.repeat(expected, 3, axis=0), atol=1e-12)

    def test_mask_one_position(self):
        rng = np.random.default_rng(1)
        q, kv = Tensor(rng.normal(size=(2, 8))), rng.normal(size=(4, 8))
        mask = np.array([False, False, True, False])
        base = multi_head_attention(q, Tensor(kv), Tensor(kv), mask, self.W, 4).data
        kv2 = kv.copy()
        kv2[[0, 1, 3]] = rng.normal(size=(3, 8))
        other = multi_head_attention(q, Tensor(kv2), Tensor(kv2), mask, self.W, 4).data
        np.testing.assert_allclose(base, other, atol=1e-12)
        expected = kv[2] @ self.W["wv"].data @ self.W["wo"].data
        np.testing.assert_allclose(base, np.tile(expected, (2, 1)), atol=1e-12)

    def test_uniform_keys_give_mean_of_values(self):
        rng = np.random.default_rng(2)
        k = Tensor(np.tile(rng.normal(size=(1, 8)), (5, 1)))
        v = Tensor(rng.normal(size=(5, 8)))
        out = multi_head_attention(Tensor(rng.normal(size=(3, 8))), k, v, None, self.W, 2).data
        expected = v.data.mean(axis=0) @ self.W["wv"].data @ self.W["wo"].data
        np.testing.assert_allclose(out, np.tile(expected, (3, 1)), atol=1e-12)


class TestEncoderLayer:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 30))
    def test_shape(self, n):
        p = init_params(CFG, np.random.default_rng(n))
        x = Tensor(np.random.default_rng(n).normal(size=(n, CFG.hidden)))
        assert encoder_layer(x, None, sub(p, "sent.0"), CFG).shape == (n, CFG.hidden)

    def test_zeroed_sublayers_identity(self, params):
        p = zero_sublayers(params, "sent")
        x = Tensor(np.random.default_rng(0).normal(size=(5, CFG.hidden)))
        np.testing.assert_array_equal(encoder_layer(x, None, sub(p, "sent.0"), CFG).data, x.data)

    def test_pad_content_ignored(self, params):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, CFG.hidden))
        mask = np.array([True, True, True, True, False, False])
        a = encoder_layer(Tensor(x), mask, sub(params, "sent.0"), CFG).data
        x[4:] = rng.normal(size=(2, CFG.hidden)) * 10
        b = encoder_layer(Tensor(x), mask, sub(params, "sent.0"), CFG).data
        np.testing.assert_allclose(a[:4], b[:4], atol=1e-12)


class TestSentenceEncoder:
    def test_shape_and_determinism(self, params):
        s = [7, 8, 9, EOS]
        a = encode_sentence(s, 0, params, CFG)
        assert a.shape == (CFG.hidden,)
        np.testing.assert_array_equal(a.data, encode_sentence(s, 0, params, CFG).data)

    def test_position_offset(self, params):
        s = [7, 8, 9, EOS]
        diff = encode_sentence(s, 3, params, CFG).data - encode_sentence(s, 1, params, CFG).data
        np.testing.assert_allclose(diff, sincos_position(3, CFG.hidden) - sincos_position(1, CFG.hidden),
                                   atol=1e-12)

    def test_word_and_sentence_positions_share_table(self, params):
        # the vector added at word position t equals the one added at sentence position t
        table = sincos_table(CFG.max_positions, CFG.hidden)
        for t in (0, 5, 29):
            np.testing.assert_array_equal(table[t], sincos_position(t, CFG.hidden))

    def test_missing_eos(self, params):
        with pytest.raises(ValueError):
            encode_sentence([7, 8], 0, params, CFG)

    def test_batching_matches_single(self, params):
        rng = np.random.default_rng(4)
        docs = [random_doc(rng) for _ in range(4)]
        batch = encode_documents(docs, params, CFG)
        for b, d in enumerate(docs):
            single = encode_document(d, params, CFG)
            n = len(d.sentences)
            np.testing.assert_allclose(batch.contextual.data[b, :n], single.contextual.data, atol=1e-10)


class TestDocumentEncoder:
    def test_single_sentence(self, params):
        rep = encode_document(Document([[5, 6, EOS]]), params, CFG)
        assert rep.contextual.shape == (1, CFG.hidden)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 30))
    def test_n_vectors(self, n):
        p = init_params(CFG, np.random.default_rng(0))
        rep = encode_document(random_doc(np.random.default_rng(n), n_sent=n, max_len=3), p, CFG)
        assert rep.contextual.shape == rep.sentence_vectors.shape == (n, CFG.hidden)

    def test_zeroed_doc_stack_identity(self, params):
        p = zero_sublayers(params, "doc")
        rep = encode_document(random_doc(np.random.default_rng(5), 4), p, CFG)
        np.testing.assert_array_equal(rep.contextual.data, rep.sentence_vectors.data)

    def test_bidirectional(self, params):
        rng = np.random.default_rng(6)
        doc = random_doc(rng, 4)
        base = encode_document(doc, params, CFG).contextual.data
        for j in range(4):
            changed = Document([list(s) for s in doc.sentences])
            changed.sentences[j][0] = 5 + (changed.sentences[j][0] - 4) % (CFG.vocab_size - 5)
            out = encode_document(changed, params, CFG).contextual.data
            for i in range(4):
                if i != j:
                    assert np.abs(out[i] - base[i]).max() > 1e-9

    def test_permutation_equivariance_without_positions(self, params):
        rng = np.random.default_rng(7)
        h = rng.normal(size=(5, CFG.hidden))
        perm = rng.permutation(5)
        a = document_encoder(Tensor(h), None, params, CFG).data
        b = document_encoder(Tensor(h[perm]), None, params, CFG).data
        np.testing.assert_allclose(a[perm], b, atol=1e-12)

    def test_grads_reach_every_token_embedding(self, params):
        p = copy_params(params)
        for t in p.values():
            t.requires_grad = True
        doc = random_doc(np.random.default_rng(8), 3)
        encode_document(doc, p, CFG).contextual.sum().backward()
        for s in doc.sentences:
            for tok in s:
                assert np.abs(p["embed.w"].grad[tok]).max() > 0
        assert not p["embed.w"].grad[PAD].any()

    def test_dropout_changes_output_only_in_training(self, params):
        doc = random_doc(np.random.default_rng(9), 3)
        ev = encode_document(doc, params, CFG).contextual.data
        tr = encode_document(doc, params, CFG, np.random.default_rng(0)).contextual.data
        assert np.abs(ev - tr).max() > 0
        tr2 = encode_document(doc, params, CFG, np.random.default_rng(0)).contextual.data
        np.testing.assert_array_equal(tr, tr2)
