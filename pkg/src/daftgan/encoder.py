"""Separated mask convolution (SMC) encoder.

Mask convention: 0 marks a valid (known) cell, 1 an invalid (hole) cell.
Valid and invalid regions are convolved by separate kernels and normalized
with separate statistics, so nothing computed for the valid region at any
level depends on hole content.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Conv2d, Module, Parameter, Tensor, no_grad, ops


class ConfigError(ValueError):
    """Inconsistent network geometry or hyper-parameters."""


class GeometryError(ValueError):
    """Mask pooling geometry does not match the paired convolution."""


def check_mask(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim not in (2, 3) or m.size == 0:
        raise ValueError(f"mask must be a non-empty HxW or NxHxW grid, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask entries must be 0 (valid) or 1 (invalid)")
    return m


def mask_update(mask, k: int, stride: int, padding: int, conv: Conv2d | None = None) -> np.ndarray:
    """Min-pool a mask: an output cell is valid (0) iff its window holds a valid cell.

    Padding cells count as invalid. Passing ``conv`` checks that the pooling
    window matches that convolution exactly.
    """
    if conv is not None and (conv.kernel_size, conv.stride, conv.padding) != (k, stride, padding):
        raise GeometryError(
            f"mask pooling k={k} s={stride} p={padding} does not match convolution "
            f"k={conv.kernel_size} s={conv.stride} p={conv.padding}")
    m = check_mask(mask)
    squeeze = m.ndim == 2
    m4 = m[None, None] if squeeze else m[:, None]
    if padding:
        m4 = np.pad(m4, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=1.0)
    with no_grad():
        pooled = ops.neg(ops.max_pool2d(ops.neg(Tensor(m4)), k, stride, 0)).data
    pooled = pooled + 0.0  # -0.0 -> 0.0
    return pooled[0, 0] if squeeze else pooled[:, 0]


def _bcast_mask(m: np.ndarray, shape) -> Tensor:
    """``[N,H,W]`` region indicator expanded over channels as a constant."""
    return Tensor(np.broadcast_to(m[:, None], shape).copy())


def _bcast_channel(v: Tensor, shape) -> Tensor:
    """Per-channel ``[C]`` or per-sample-channel ``[N,C]`` values over NCHW."""
    if v.ndim == 1:
        v = ops.reshape(v, (1, v.shape[0], 1, 1))
    else:
        v = ops.reshape(v, v.shape + (1, 1))
    return ops.broadcast_to(v, shape)


def _region_standardize(f: Tensor, region: np.ndarray, eps: float) -> Tensor:
    shape = f.shape
    r = _bcast_mask(region, shape)
    count = np.maximum(region.sum(axis=(1, 2)), 1.0)  # [N]
    inv = Tensor(np.broadcast_to((1.0 / count)[:, None], shape[:2]).copy())
    mu = ops.mul(ops.sum(ops.mul(f, r), axis=(2, 3)), inv)
    centered = ops.mul(ops.sub(f, _bcast_channel(mu, shape)), r)
    var = ops.mul(ops.sum(ops.mul(centered, centered), axis=(2, 3)), inv)
    return ops.mul(centered, _bcast_channel(ops.power(ops.add(var, eps), -0.5), shape))


def mask_normalize(f: Tensor, mask, scale: Tensor | None = None, shift: Tensor | None = None,
                   eps: float = 1e-5) -> Tensor:
    """Per-channel standardization using valid-only and invalid-only statistics.

    ``f`` is ``[N,C,H,W]`` (or ``[C,H,W]``) and ``mask`` matches it spatially.
    An empty or constant region comes out as zeros before the affine part.
    """
    m = check_mask(mask)
    squeeze = f.ndim == 3
    if squeeze:
        f = ops.reshape(f, (1,) + f.shape)
        m = m[None] if m.ndim == 2 else m
    if m.ndim == 2:
        m = np.broadcast_to(m, (f.shape[0],) + m.shape)
    if m.shape != (f.shape[0],) + f.shape[2:]:
        raise ValueError(f"mask shape {m.shape} does not match features {f.shape}")
    out = ops.add(_region_standardize(f, 1.0 - m, eps), _region_standardize(f, m, eps))
    if scale is not None:
        out = ops.mul(out, _bcast_channel(scale, out.shape))
    if shift is not None:
        out = ops.add(out, _bcast_channel(shift, out.shape))
    return ops.reshape(out, out.shape[1:]) if squeeze else out


class SMCBlock(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, padding: int, rng: np.random.Generator):
        self.conv_valid = Conv2d(c_in, c_out, k, stride, padding, rng)
        self.conv_invalid = Conv2d(c_in, c_out, k, stride, padding, rng)
        self.norm_scale = Parameter(np.ones(c_out))
        self.norm_shift = Parameter(np.zeros(c_out))

    @property
    def geometry(self) -> tuple[int, int, int]:
        c = self.conv_valid
        return c.kernel_size, c.stride, c.padding

    def __call__(self, f: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        k, s, p = self.geometry
        keep = _bcast_mask(1.0 - mask, f.shape)
        hole = _bcast_mask(mask, f.shape)
        f_val = self.conv_valid(ops.mul(f, keep))
        f_inval = self.conv_invalid(ops.mul(f, hole))
        new_mask = mask_update(mask, k, s, p, conv=self.conv_valid)
        f_val = mask_normalize(f_val, new_mask, self.norm_scale, self.norm_shift)
        f_inval = mask_normalize(f_inval, new_mask, self.norm_scale, self.norm_shift)
        out = ops.add(ops.mul(f_val, _bcast_mask(1.0 - new_mask, f_val.shape)),
                      ops.mul(f_inval, _bcast_mask(new_mask, f_val.shape)))
        return out, new_mask


def smc_block(f: Tensor, mask, block: SMCBlock) -> tuple[Tensor, np.ndarray]:
    return block(f, check_mask(mask))


@dataclass
class EncoderPyramid:
    """Level ``i`` holds ``(features [N,C_i,H_i,W_i], mask [N,H_i,W_i])``; level 0 is the input."""

    levels: list[tuple[Tensor, np.ndarray]]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> tuple[Tensor, np.ndarray]:
        return self.levels[i]

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def sizes(self) -> list[int]:
        return [f.shape[-1] for f, _ in self.levels]


def image_size_for_depth(depth: int) -> int:
    return 4 * 2 ** (depth - 1)


def default_channels(depth: int, base: int = 32, cap: int = 256) -> list[int]:
    return [min(base * 2 ** i, cap) for i in range(depth)]


class SMCEncoder(Module):
    """``depth`` SMC blocks: a stride-1 block then ``depth-1`` stride-2 blocks down to 4x4."""

    def __init__(self, depth: int, channels: list[int] | None = None, in_channels: int = 3,
                 rng: np.random.Generator | None = None):
        if depth < 1:
            raise ConfigError("encoder depth must be >= 1")
        channels = list(channels) if channels is not None else default_channels(depth)
        if len(channels) != depth:
            raise ConfigError(f"need {depth} channel widths, got {len(channels)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.depth = depth
        self.channels = channels
        self.in_channels = in_channels
        blocks = [SMCBlock(in_channels, channels[0], 3, 1, 1, rng)]
        for i in range(1, depth):
            blocks.append(SMCBlock(channels[i - 1], channels[i], 4, 2, 1, rng))
        self.blocks = blocks

    @property
    def image_size(self) -> int:
        return image_size_for_depth(self.depth)

    def __call__(self, masked_image, mask) -> EncoderPyramid:
        x = masked_image if isinstance(masked_image, Tensor) else Tensor(masked_image)
        m = check_mask(mask)
        if x.ndim == 3:
            x = ops.reshape(x, (1,) + x.shape)
        if m.ndim == 2:
            m = m[None]
        s = self.image_size
        if x.shape[-2:] != (s, s) or x.shape[1] != self.in_channels:
            raise ConfigError(f"depth {self.depth} needs {self.in_channels}x{s}x{s} inputs "
                              f"(S = 4*2^(L-1)), got {x.shape[1:]}")
        if m.shape != (x.shape[0], s, s):
            raise ConfigError(f"mask shape {m.shape} does not match image batch {x.shape}")
        levels = [(x, m)]
        f = x
        for block in self.blocks:
            f, m = block(f, m)
            levels.append((f, m))
        return EncoderPyramid(levels)


def encode(masked_image, mask, encoder: SMCEncoder) -> EncoderPyramid:
    return encoder(masked_image, mask)
