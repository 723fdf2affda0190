"""Sentence-conditioned discriminator and the training objectives.

Discriminator loss: hinge terms for real/matched, fake/matched and
real/mismatched pairs plus a zero-centred gradient penalty at real matched
pairs (MA-GP). Generator loss: weighted perceptual reconstruction,
adversarial, text-attention and (stubbed) DAMSM terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Conv2d, Module, Tensor, grad, ops
from .encoder import _bcast_mask
from .text import TextBundle


@dataclass
class LossWeights:
    rec: float = 0.2
    damsm: float = 0.01
    k: float = 2.0
    p: float = 6.0

    def __post_init__(self):
        for name in ("rec", "damsm", "k", "p"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass
class LossReport:
    """Named scalar components of one step plus the differentiable total."""

    total: Tensor
    components: dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.total.item()

    def as_row(self) -> dict[str, float]:
        return dict(self.components)

    def check_finite(self) -> None:
        for name, v in self.components.items():
            if not np.isfinite(v):
                raise FloatingPointError(f"loss component '{name}' is not finite ({v})")


class Discriminator(Module):
    """Strided conv stack down to 4x4, then sentence fusion and a scalar head.

    Uses only conv2d, leaky_relu, concat, reshape and broadcasting, all of
    which support double-backward.
    """

    def __init__(self, image_size: int = 32, channels: int = 32, dim: int = 32, max_channels: int = 128,
                 seed: int = 1, zero_head: bool = False):
        rng = np.random.default_rng(seed)
        if image_size < 4 or image_size & (image_size - 1):
            raise ValueError(f"discriminator needs a power-of-two image size >= 4, got {image_size}")
        self.image_size = image_size
        self.dim = dim
        self.from_rgb = Conv2d(3, channels, 3, 1, 1, rng)
        downs, c, size = [], channels, image_size
        while size > 4:
            c_next = min(2 * c, max_channels)
            downs.append(Conv2d(c, c_next, 4, 2, 1, rng))
            c, size = c_next, size // 2
        self.downs = downs
        self.joint = Conv2d(c + dim, c, 3, 1, 1, rng)
        self.head = Conv2d(c, 1, 4, 1, 0, rng, zero_init=zero_head)

    def __call__(self, image: Tensor, sentence: Tensor) -> Tensor:
        x = image if image.ndim == 4 else ops.reshape(image, (1,) + image.shape)
        s = sentence if sentence.ndim == 2 else ops.reshape(sentence, (1,) + sentence.shape)
        h = ops.leaky_relu(self.from_rgb(x))
        for conv in self.downs:
            h = ops.leaky_relu(conv(h))
        h = ops.concat([h, ops.spatial_replicate(s, h.shape[2], h.shape[3])], axis=1)
        h = ops.leaky_relu(self.joint(h))
        out = self.head(h)
        return ops.reshape(out, (out.shape[0],))


def discriminate(image: Tensor, sentence: Tensor, disc: Discriminator) -> Tensor:
    return disc(image, sentence)


def _leaf(x) -> Tensor:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return Tensor(data, requires_grad=True)


def _per_sample_norm(g: Tensor) -> Tensor:
    """Euclidean norm over all but the leading axis -> ``[N]``."""
    axes = tuple(range(1, g.ndim))
    return ops.sqrt(ops.sum(ops.mul(g, g), axis=axes))


def ma_gp(disc: Callable, real: Tensor, sentence: Tensor, k: float, p: float) -> tuple[Tensor, Tensor]:
    """``k * E[(|grad_x D(x,s)| + |grad_s D(x,s)|)^p]`` and the scores D(x,s)."""
    x = _leaf(real)
    s = _leaf(sentence)
    scores = disc(x, s)
    gx, gs = grad(ops.sum(scores), [x, s], create_graph=True)
    norms = ops.add(_per_sample_norm(gx), _per_sample_norm(gs))
    return ops.mul(ops.mean(ops.power(norms, p)), k), scores


def d_loss(disc: Callable, real: Tensor, fake: Tensor, sentence: Tensor, mismatched: Tensor | None,
           k: float = 2.0, p: float = 6.0) -> LossReport:
    if mismatched is None:
        raise ValueError("the matching-aware loss needs mismatched sentences")
    fake = fake.detach() if isinstance(fake, Tensor) else Tensor(fake)
    sentence = sentence.detach() if isinstance(sentence, Tensor) else Tensor(sentence)
    mismatched = mismatched.detach() if isinstance(mismatched, Tensor) else Tensor(mismatched)
    penalty, real_scores = ma_gp(disc, real, sentence, k, p)
    real_term = ops.mean(ops.relu(ops.sub(1.0, real_scores)))
    fake_term = ops.mul(ops.mean(ops.relu(ops.add(1.0, disc(fake, sentence)))), 0.5)
    mis_in = real.detach() if isinstance(real, Tensor) else Tensor(real)
    mis_term = ops.mul(ops.mean(ops.relu(ops.add(1.0, disc(mis_in, mismatched)))), 0.5)
    total = ops.add(ops.add(real_term, fake_term), ops.add(mis_term, penalty))
    comps = {"d_real": real_term.item(), "d_fake": fake_term.item(), "d_mismatch": mis_term.item(),
             "d_penalty": penalty.item(), "d_total": total.item()}
    return LossReport(total, comps)


class FeatureExtractor(Module):
    """Frozen feature pyramid for the perceptual loss.

    ``layers`` are callables applied in sequence; the activation after each is
    compared with weight ``weights[i]``. The default is a seeded random
    3-layer convolution pyramid with equal weights.
    """

    def __init__(self, layers: Sequence[Callable] | None = None, weights: Sequence[float] | None = None,
                 seed: int = 7):
        if layers is None:
            rng = np.random.default_rng(seed)
            convs = [Conv2d(3, 8, 3, 1, 1, rng), Conv2d(8, 16, 4, 2, 1, rng), Conv2d(16, 32, 4, 2, 1, rng)]
            for c in convs:  # frozen: plain tensors, never returned by parameters()
                c.weight = Tensor(c.weight.data)
                c.bias = Tensor(c.bias.data)
            self._convs = convs
            layers = [lambda x, c=c: ops.leaky_relu(c(x)) for c in convs]
        self.layers = list(layers)
        self.weights = list(weights) if weights is not None else [1.0 / len(self.layers)] * len(self.layers)
        if len(self.weights) != len(self.layers):
            raise ValueError("one weight per feature layer is required")

    def features(self, x: Tensor) -> list[Tensor]:
        out = []
        for layer in self.layers:
            x = layer(x)
            out.append(x)
        return out


def recon_loss(x_hat: Tensor, x: Tensor, fe: FeatureExtractor) -> Tensor:
    if x_hat.shape != x.shape:
        raise ValueError(f"shapes differ: {x_hat.shape} vs {x.shape}")
    x = x.detach() if isinstance(x, Tensor) else Tensor(x)
    if x_hat.ndim == 3:
        x_hat, x = ops.reshape(x_hat, (1,) + x_hat.shape), ops.reshape(x, (1,) + x.shape)
    total = Tensor(0.0)
    for w, fh, fx in zip(fe.weights, fe.features(x_hat), fe.features(x)):
        total = ops.add(total, ops.mul(ops.mean(_per_sample_norm(ops.sub(fh, fx))), w))
    return total


def g_adv_loss(disc: Callable, x_hat: Tensor, sentence: Tensor) -> Tensor:
    return ops.neg(ops.mean(disc(x_hat, sentence)))


def attn_loss(x_hat: Tensor, x: Tensor, attention: np.ndarray) -> Tensor:
    """``|A*x_hat - A*x|_1`` per sample, batch-averaged; ``A`` is a constant map in [0,1]."""
    x = x.detach() if isinstance(x, Tensor) else Tensor(x)
    squeeze = x_hat.ndim == 3
    if squeeze:
        x_hat, x = ops.reshape(x_hat, (1,) + x_hat.shape), ops.reshape(x, (1,) + x.shape)
    a = np.asarray(attention, dtype=np.float64)
    a = a.reshape(x_hat.shape[0], -1, *x_hat.shape[2:])
    a = Tensor(np.broadcast_to(a, x_hat.shape).copy())
    diff = ops.sub(ops.mul(a, x_hat), ops.mul(a, x))
    return ops.mean(ops.sum(ops.abs(diff), axis=(1, 2, 3)))


def damsm_loss(*_args) -> Tensor:
    """Placeholder for the pretrained image-text matching loss; always zero."""
    return Tensor(0.0)


def g_total_loss(rec: Tensor, adv: Tensor, attn: Tensor, damsm: Tensor, weights: LossWeights) -> LossReport:
    rec, adv, attn, damsm = (t if isinstance(t, Tensor) else Tensor(float(t)) for t in (rec, adv, attn, damsm))
    total = ops.add(ops.add(ops.mul(rec, weights.rec), adv), ops.add(attn, ops.mul(damsm, weights.damsm)))
    comps = {"g_rec": rec.item(), "g_adv": adv.item(), "g_attn": attn.item(), "g_damsm": damsm.item(),
             "g_total": total.item()}
    return LossReport(total, comps)


def mismatched_sentences(text: TextBundle) -> Tensor:
    """Sentences rolled by one position across the batch."""
    return text.roll(1).sentence
