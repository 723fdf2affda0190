"""Dual affine transformation (DAFT) decoder and the full generator.

Each DAFT block runs two paths. The global path fuses the encoder skip and
modulates it per channel with parameters predicted from a recurrent state
fed by the sentence embedding (RAT). The spatial path attends from every
pixel to the word features and predicts per-pixel, per-channel modulation
(CrossAffine), followed by a convolution (MCAT). The spatial outputs are
chained across scales with residual upsampling, and the last one is mapped
to RGB.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Conv2d, Linear, MLP, Module, Tensor, ops
from .autograd.tensor import ShapeError
from .encoder import ConfigError, EncoderPyramid, SMCEncoder, _bcast_channel, _bcast_mask, check_mask
from .text import TextBundle

MASKED_LOGIT = -1e9


@dataclass
class RecurrentState:
    h: Tensor
    c: Tensor
    t: int = 0

    @classmethod
    def zeros(cls, batch: int, dim: int) -> "RecurrentState":
        return cls(Tensor(np.zeros((batch, dim))), Tensor(np.zeros((batch, dim))), 0)


@dataclass
class GeneratorOutput:
    raw: Tensor
    composited: Tensor
    attention: np.ndarray | None = None  # [N,1,S,S] in [0,1], detached
    features: Tensor | None = None


class LSTMCell(Module):
    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.ih = Linear(n_in, 4 * n_hidden, rng)
        self.hh = Linear(n_hidden, 4 * n_hidden, rng, bias=False)
        self.n_hidden = n_hidden

    def __call__(self, x: Tensor, state: RecurrentState) -> RecurrentState:
        d = self.n_hidden
        gates = ops.add(self.ih(x), self.hh(state.h))
        i, f, g, o = ops.split(gates, [d, d, d, d], axis=-1)
        c = ops.add(ops.mul(ops.sigmoid(f), state.c), ops.mul(ops.sigmoid(i), ops.tanh(g)))
        h = ops.mul(ops.sigmoid(o), ops.tanh(c))
        return RecurrentState(h, c, state.t + 1)


def init_input(z: Tensor, bottleneck: Tensor, fc: Linear) -> Tensor:
    """Noise through one fully connected layer, reshaped and added to the bottleneck."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.ndim == 1:
        z = ops.reshape(z, (1,) + z.shape)
    if bottleneck.ndim == 3:
        bottleneck = ops.reshape(bottleneck, (1,) + bottleneck.shape)
    if fc.weight.shape[0] != int(np.prod(bottleneck.shape[1:])):
        raise ShapeError(f"noise layer emits {fc.weight.shape[0]} values, bottleneck holds {bottleneck.shape[1:]}")
    if z.shape[0] != bottleneck.shape[0]:
        raise ShapeError(f"noise batch {z.shape[0]} != feature batch {bottleneck.shape[0]}")
    return ops.add(ops.reshape(fc(z), bottleneck.shape), bottleneck)


def fuse_skip(skip: Tensor, feature: Tensor) -> Tensor:
    if skip.shape != feature.shape:
        raise ShapeError(f"skip {skip.shape} and decoder feature {feature.shape} must match")
    return ops.add(skip, feature)


class RAT(Module):
    """Recurrent affine transformation over the global path."""

    def __init__(self, channels: int, dim: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or dim
        self.lstm = LSTMCell(dim, dim, rng)
        self.gamma = MLP(dim, hidden, channels, rng, zero_init_output=True)
        self.beta = MLP(dim, hidden, channels, rng, zero_init_output=True)

    def __call__(self, f: Tensor, sentence: Tensor, state: RecurrentState):
        state = self.lstm(sentence, state)
        gamma = _bcast_channel(self.gamma(state.h), f.shape)
        beta = _bcast_channel(self.beta(state.h), f.shape)
        return ops.add(f, ops.add(ops.mul(gamma, f), beta)), state


def rat_step(f: Tensor, sentence: Tensor, state: RecurrentState, rat: RAT, block_index: int | None = None):
    if block_index is not None and state.t != block_index:
        raise ValueError(f"recurrent state is at step {state.t}, block {block_index} expects step {block_index}")
    return rat(f, sentence, state)


def _channels_last(x: Tensor) -> Tensor:
    return ops.transpose(x, (0, 2, 3, 1))


def _channels_first(x: Tensor) -> Tensor:
    return ops.transpose(x, (0, 3, 1, 2))


def _batched_words(words: Tensor, batch: int) -> Tensor:
    if words.ndim == 2:
        words = ops.reshape(words, (1,) + words.shape)
        if batch != 1:
            words = ops.broadcast_to(words, (batch,) + words.shape[1:])
    return words


def _logit_mask(valid: np.ndarray | None, n: int, hw: int, length: int) -> Tensor | None:
    if valid is None or valid.all():
        return None
    bias = np.where(valid, 0.0, MASKED_LOGIT)[:, None, :]
    return Tensor(np.broadcast_to(bias, (n, hw, length)).copy())


def cross_attention(x: Tensor, words: Tensor, w_q: Linear, valid: np.ndarray | None = None) -> Tensor:
    """Per-pixel attention over words: ``softmax(Q K^T) V`` with K = V = words.

    ``x`` is ``[N,C,H,W]`` (or ``[C,H,W]``); the result is ``[N,d,H,W]``.
    Logits are not scaled.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = ops.reshape(x, (1,) + x.shape)
    n, c, h, w = x.shape
    words = _batched_words(words, n)
    length, d = words.shape[1:]
    q = w_q(ops.reshape(_channels_last(x), (n, h * w, c)))
    logits = ops.matmul(q, ops.transpose(words, (0, 2, 1)))
    mask = _logit_mask(valid, n, h * w, length)
    if mask is not None:
        logits = ops.add(logits, mask)
    attn = ops.softmax(logits, axis=-1)
    out = _channels_first(ops.reshape(ops.matmul(attn, words), (n, h, w, d)))
    return ops.reshape(out, out.shape[1:]) if squeeze else out


def spatial_replicate(h: Tensor, height: int, width: int) -> Tensor:
    return ops.spatial_replicate(h, height, width)


class CrossAffine(Module):
    def __init__(self, channels: int, dim: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or dim
        self.query = Linear(channels, dim, rng, bias=False)
        self.gamma = MLP(2 * dim, hidden, channels, rng, zero_init_output=True)
        self.beta = MLP(2 * dim, hidden, channels, rng, zero_init_output=True)

    def modulation(self, x: Tensor, h: Tensor, text: TextBundle) -> tuple[Tensor, Tensor]:
        n, _, height, width = x.shape
        attn = cross_attention(x, text.words, self.query, text.valid)
        hs = h if h.ndim == 2 else ops.reshape(h, (1,) + h.shape)
        spatial = _channels_last(ops.concat([attn, spatial_replicate(hs, height, width)], axis=1))
        return _channels_first(self.gamma(spatial)), _channels_first(self.beta(spatial))

    def __call__(self, x: Tensor, h: Tensor, text: TextBundle) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = ops.reshape(x, (1,) + x.shape)
        gamma, beta = self.modulation(x, h, text)
        out = ops.add(x, ops.add(ops.mul(gamma, x), beta))
        return ops.reshape(out, out.shape[1:]) if squeeze else out

    def attention_map(self, features: Tensor, text: TextBundle) -> np.ndarray:
        """Detached ``[N,1,H,W]`` map in [0,1]: softmax over pixels per word, max over words."""
        x = features.data
        n, c, h, w = x.shape
        words = text.words.data
        if words.ndim == 2:
            words = np.broadcast_to(words, (n,) + words.shape)
        q = x.transpose(0, 2, 3, 1).reshape(n, h * w, c) @ self.query.weight.data.T
        logits = q @ words.transpose(0, 2, 1)  # [N, HW, L]
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p = p / p.sum(axis=1, keepdims=True)
        if text.valid is not None:
            p = np.where(text.valid[:, None, :], p, 0.0)
        a = p.max(axis=2)
        a = a / np.maximum(a.max(axis=1, keepdims=True), 1e-300)
        return a.reshape(n, 1, h, w)


def cross_affine(x: Tensor, h: Tensor, text: TextBundle, layer: CrossAffine) -> Tensor:
    return layer(x, h, text)


class MCAT(Module):
    """CrossAffine, leaky ReLU and a convolution; residual link to the previous scale."""

    def __init__(self, channels: int, out_channels: int, dim: int, rng: np.random.Generator):
        self.cross = CrossAffine(channels, dim, rng)
        self.conv = Conv2d(channels, out_channels, 3, 1, 1, rng)

    def __call__(self, f: Tensor, text: TextBundle, h: Tensor, prev: Tensor | None = None,
                 upsample: bool = True) -> Tensor:
        y = self.conv(ops.leaky_relu(self.cross(f, h, text)))
        if prev is None:
            return y
        if upsample:
            prev = ops.upsample_nearest2x(prev)
        if prev.shape != y.shape:
            raise ShapeError(f"previous spatial output {prev.shape} does not line up with {y.shape}")
        return ops.add(y, prev)


def mcat_module(f: Tensor, words: TextBundle, h: Tensor, prev: Tensor | None, layer: MCAT,
                upsample: bool = True) -> Tensor:
    return layer(f, words, h, prev, upsample)


class DAFTBlock(Module):
    def __init__(self, c_prev: int | None, channels: int, skip_channels: int | None, spatial_channels: int,
                 dim: int, upsample: bool, rng: np.random.Generator):
        self.upsample = upsample
        self.transition = Conv2d(c_prev, channels, 3, 1, 1, rng) if c_prev is not None else None
        self.skip_proj = (Conv2d(skip_channels, channels, 1, 1, 0, rng)
                          if skip_channels is not None and skip_channels != channels else None)
        self.rat = RAT(channels, dim, rng)
        self.mcat = MCAT(channels, spatial_channels, dim, rng)

    def __call__(self, g_in: Tensor, skip: Tensor | None, text: TextBundle, state: RecurrentState,
                 prev_spatial: Tensor | None):
        f = g_in
        if self.transition is not None:
            f = ops.leaky_relu(f)
            if self.upsample:
                f = ops.upsample_nearest2x(f)
            f = self.transition(f)
        if skip is not None:
            if self.skip_proj is not None:
                skip = self.skip_proj(skip)
            f = fuse_skip(skip, f)
        g_out, state = self.rat(f, text.sentence, state)
        s_out = self.mcat(g_out, text, state.h, prev_spatial, self.upsample)
        return g_out, s_out, state


def composite(image: Tensor, raw: Tensor, mask) -> Tensor:
    """Keep valid pixels from ``image``; take hole pixels from ``raw``."""
    m = check_mask(mask)
    if m.ndim == 2:
        m = m[None]
    keep = _bcast_mask(1.0 - m, raw.shape)
    hole = _bcast_mask(m, raw.shape)
    return ops.add(ops.mul(image, keep), ops.mul(raw, hole))


class Generator(Module):
    """SMC encoder plus ``depth + 1`` DAFT blocks mirroring it back to full size."""

    def __init__(self, depth: int = 4, channels: list[int] | None = None, dim: int = 32, noise_dim: int = 32,
                 spatial_channels: int | None = None, seed: int = 0, zero_output: bool = True):
        rng = np.random.default_rng(seed)
        self.encoder = SMCEncoder(depth, channels, rng=rng)
        ch = self.encoder.channels
        self.depth = depth
        self.dim = dim
        self.noise_dim = noise_dim
        self.spatial_channels = spatial_channels or ch[0]
        self.noise_fc = Linear(noise_dim, ch[-1] * 16, rng)
        # level j of the pyramid has width ch[j-1] (level 0 is the RGB input)
        widths = [3] + ch
        sizes = [image_size_for(depth, j) for j in range(depth + 1)]
        blocks, c_prev = [], None
        for i in range(depth + 1):
            level = depth - i
            c_block = ch[max(level - 1, 0)]
            if i == 0:
                blocks.append(DAFTBlock(None, c_block, None, self.spatial_channels, dim, False, rng))
            else:
                up = sizes[level] > sizes[level + 1]
                blocks.append(DAFTBlock(c_prev, c_block, widths[level], self.spatial_channels, dim, up, rng))
            c_prev = c_block
        self.blocks = blocks
        # a zero output layer makes the untrained generator reproduce the masked input exactly
        self.to_rgb = Conv2d(self.spatial_channels, 3, 3, 1, 1, rng, zero_init=zero_output)

    @property
    def image_size(self) -> int:
        return self.encoder.image_size

    def decode(self, pyramid: EncoderPyramid, z: Tensor, text: TextBundle):
        if pyramid.depth != self.depth:
            raise ConfigError(f"pyramid depth {pyramid.depth} != generator depth {self.depth}")
        n = pyramid[0][0].shape[0]
        if text.sentence.ndim == 1:
            # one caption shared by the whole batch
            sentence = ops.broadcast_to(ops.reshape(text.sentence, (1, self.dim)), (n, self.dim))
            text = TextBundle(text.words, sentence, text.valid)
        f = init_input(z, pyramid[self.depth][0], self.noise_fc)
        state = RecurrentState.zeros(n, self.dim)
        spatial = None
        hidden = []
        for i, block in enumerate(self.blocks):
            skip = pyramid[self.depth - i][0] if i > 0 else None
            f, spatial, state = block(f, skip, text, state, spatial)
            hidden.append(state.h)
        return f, spatial, hidden

    def __call__(self, masked_image, mask, z, text: TextBundle) -> GeneratorOutput:
        m = check_mask(mask)
        x = masked_image if isinstance(masked_image, Tensor) else Tensor(masked_image)
        squeeze = x.ndim == 3
        if squeeze:
            x = ops.reshape(x, (1,) + x.shape)
            m = m[None] if m.ndim == 2 else m
        pyramid = self.encoder(x, m)
        g_out, spatial, _ = self.decode(pyramid, z, text)
        raw = ops.tanh(self.to_rgb(ops.leaky_relu(spatial)))
        out = composite(x, raw, m)
        attention = self.blocks[-1].mcat.cross.attention_map(g_out, text)
        if squeeze:
            raw, out = ops.reshape(raw, raw.shape[1:]), ops.reshape(out, out.shape[1:])
        return GeneratorOutput(raw, out, attention, g_out)


def image_size_for(depth: int, level: int) -> int:
    """Spatial size of pyramid ``level`` for an encoder of ``depth`` blocks."""
    s = 4 * 2 ** (depth - 1)
    return s if level <= 1 else s // 2 ** (level - 1)


def generate(masked_image, mask, z, text: TextBundle, generator: Generator) -> GeneratorOutput:
    return generator(masked_image, mask, z, text)
