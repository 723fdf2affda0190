import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daftgan.autograd import Tensor, ops
from daftgan.text import COLORS, MAX_TOKENS, POSITIONS, SHAPES, SIZES, TextEncoder, Vocabulary, encode_text, tokenize

VOCAB = Vocabulary()
GRAMMAR = COLORS + SHAPES + SIZES + POSITIONS


def test_vocabulary_dense_and_unknown_first():
    assert VOCAB.tokens[0] == "<unk>"
    assert sorted(VOCAB.index(t) for t in VOCAB.tokens) == list(range(len(VOCAB)))
    assert VOCAB.index("purple") == 0
    assert len(VOCAB) == 1 + 6 + 4 + 2 + 5


def test_vocabulary_text_roundtrip():
    assert Vocabulary.from_text(VOCAB.to_text()) == VOCAB
    with pytest.raises(ValueError):
        Vocabulary(["red", "<unk>"])


def test_tokenize_examples():
    assert tokenize("red circle") == [VOCAB.index("red"), VOCAB.index("circle")]
    assert tokenize("") == [0]
    assert tokenize("  ") == [0]
    words = "red green blue yellow white black circle square triangle bar small large".split()
    assert tokenize(" ".join(words)) == [VOCAB.index(w) for w in words[:MAX_TOKENS]]
    assert tokenize("RED Circle") == tokenize("red circle")


def test_single_token_sentence_is_the_row():
    enc = TextEncoder(seed=3)
    b = encode_text([VOCAB.index("blue")], enc)
    assert np.array_equal(b.sentence.data, enc.table.data[VOCAB.index("blue")])
    assert b.words.shape == (1, 32)


def test_two_token_mean():
    enc = TextEncoder(seed=4)
    u, v = enc.table.data[2], enc.table.data[9]
    np.testing.assert_allclose(encode_text([2, 9], enc).sentence.data, (u + v) / 2, rtol=0, atol=1e-16)


def test_init_scale_and_determinism():
    a, b = TextEncoder(seed=11), TextEncoder(seed=11)
    assert np.array_equal(a.table.data, b.table.data)
    assert 0.01 < a.table.data.std() < 0.03


def test_sentence_gradient_matches_finite_differences():
    enc = TextEncoder(dim=6, seed=5)
    toks = [3, 7, 3, 12]
    w = np.random.default_rng(0).normal(size=6)

    def loss():
        return ops.sum(ops.mul(ops.tanh(encode_text(toks, enc).sentence), Tensor(w)))

    loss().backward()
    analytic = enc.table.grad.copy()
    numeric = np.zeros_like(analytic)
    eps = 1e-5
    for idx in np.ndindex(*analytic.shape):
        orig = enc.table.data[idx]
        enc.table.data[idx] = orig + eps
        up = loss().item()
        enc.table.data[idx] = orig - eps
        down = loss().item()
        enc.table.data[idx] = orig
        numeric[idx] = (up - down) / (2 * eps)
    assert np.max(np.abs(analytic - numeric)) / max(np.abs(numeric).max(), 1e-8) < 1e-6


def test_batch_encoding_matches_single():
    enc = TextEncoder(seed=2)
    caps = ["large red circle left", "small bar", "blue"]
    batch = enc.encode_captions(caps)
    for i, c in enumerate(caps):
        single = enc.encode(tokenize(c))
        n = single.length
        np.testing.assert_allclose(batch.sentence.data[i], single.sentence.data, rtol=0, atol=1e-16)
        assert np.array_equal(batch.words.data[i, :n], single.words.data)
        assert batch.valid[i].sum() == n


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(GRAMMAR), min_size=1, max_size=MAX_TOKENS), st.randoms(use_true_random=False))
def test_permutation_keeps_sentence(words, rnd):
    enc = TextEncoder(seed=1)
    perm = list(words)
    rnd.shuffle(perm)
    a = encode_text(tokenize(" ".join(words)), enc)
    b = encode_text(tokenize(" ".join(perm)), enc)
    np.testing.assert_allclose(a.sentence.data, b.sentence.data, rtol=0, atol=1e-15)
    assert sorted(map(tuple, a.words.data)) == sorted(map(tuple, b.words.data))
    assert np.all(np.isfinite(a.words.data))
