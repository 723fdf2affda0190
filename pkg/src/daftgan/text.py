"""Toy caption grammar, tokenizer and a trainable embedding text encoder.

Word features are rows of an embedding table; the sentence embedding is the
mean of the word rows. Both stay on the graph so the table trains with the
generator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Module, Parameter, Tensor, ops

COLORS = ("red", "green", "blue", "yellow", "white", "black")
SHAPES = ("circle", "square", "triangle", "bar")
SIZES = ("small", "large")
POSITIONS = ("left", "right", "top", "bottom", "center")
UNKNOWN = "<unk>"
MAX_TOKENS = 8


class Vocabulary:
    """Dense token -> index map; index 0 is the unknown token."""

    def __init__(self, tokens=None):
        if tokens is None:
            tokens = (UNKNOWN,) + COLORS + SHAPES + SIZES + POSITIONS
        tokens = tuple(tokens)
        if not tokens or tokens[0] != UNKNOWN:
            raise ValueError("vocabulary must start with the unknown token")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other.tokens == self.tokens

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def to_text(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        return cls(text.split())


def tokenize(caption: str, vocab: Vocabulary | None = None, max_tokens: int = MAX_TOKENS) -> list[int]:
    vocab = vocab or Vocabulary()
    ids = [vocab.index(w) for w in caption.lower().split()][:max_tokens]
    return ids or [0]


@dataclass
class TextBundle:
    """Word features and sentence embedding.

    ``words`` is ``[L, d]`` for one caption or ``[N, L, d]`` for a padded
    batch, in which case ``valid`` marks the real (non-padding) positions.
    """

    words: Tensor
    sentence: Tensor
    valid: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.words.shape[-2]

    def detach(self) -> "TextBundle":
        return TextBundle(self.words.detach(), self.sentence.detach(), self.valid)

    def roll(self, shift: int = 1) -> "TextBundle":
        """Batch rolled along the first axis (used for mismatched captions)."""
        w = np.roll(self.words.data, shift, axis=0)
        s = np.roll(self.sentence.data, shift, axis=0)
        v = None if self.valid is None else np.roll(self.valid, shift, axis=0)
        return TextBundle(Tensor(w), Tensor(s), v)


class TextEncoder(Module):
    """Embedding table plus mean pooling.

    ``scale`` is the std of the table's normal init. Training runs use 1.0 via
    the config: at 0.02 two captions differing in one word start ~0.03 apart
    per dimension and stay too close for the decoder to tell colors apart
    within a desk-scale run.
    """

    def __init__(self, vocab: Vocabulary | None = None, dim: int = 32, seed: int = 0, scale: float = 0.02):
        self.vocab = vocab or Vocabulary()
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.table = Parameter(rng.normal(0.0, scale, size=(len(self.vocab), dim)))

    def encode(self, tokens) -> TextBundle:
        if len(tokens) == 0:
            raise ValueError("encode_text needs at least one token")
        words = ops.embedding(self.table, tokens)
        return TextBundle(words, ops.mean(words, axis=0))

    def encode_batch(self, token_lists) -> TextBundle:
        n = len(token_lists)
        lmax = max(len(t) for t in token_lists)
        idx = np.zeros((n, lmax), dtype=np.int64)
        valid = np.zeros((n, lmax), dtype=bool)
        for i, toks in enumerate(token_lists):
            if not toks:
                raise ValueError("encode_text needs at least one token")
            idx[i, : len(toks)] = toks
            valid[i, : len(toks)] = True
        words = ops.embedding(self.table, idx)
        keep = np.broadcast_to(valid[:, :, None], words.shape).astype(np.float64)
        lengths = valid.sum(axis=1, keepdims=True).astype(np.float64)
        summed = ops.sum(ops.mul(words, Tensor(keep)), axis=1)
        sentence = ops.mul(summed, Tensor(np.broadcast_to(1.0 / lengths, summed.shape).copy()))
        return TextBundle(words, sentence, valid)

    def encode_captions(self, captions) -> TextBundle:
        return self.encode_batch([tokenize(c, self.vocab) for c in captions])


def encode_text(tokens, encoder: TextEncoder) -> TextBundle:
    return encoder.encode(tokens)
