"""Irregular brush-stroke masks and centered square masks (1 = hole)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MaskGenerationError(RuntimeError):
    """The requested hole ratio could not be reached."""


@dataclass(frozen=True)
class MaskSpec:
    kind: str = "irregular"
    lo: float = 0.10
    hi: float = 0.70
    strokes: tuple[int, int] = (1, 4)
    width: tuple[float, float] = (0.06, 0.16)  # brush radius as a fraction of the image size
    walk: tuple[int, int] = (3, 8)  # vertices per stroke
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("irregular", "center"):
            raise ValueError(f"mask kind must be 'irregular' or 'center', got {self.kind!r}")
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"ratio bounds must satisfy 0 <= lo <= hi <= 1, got [{self.lo}, {self.hi}]")

    def with_seed(self, seed: int) -> "MaskSpec":
        return MaskSpec(self.kind, self.lo, self.hi, self.strokes, self.width, self.walk, seed)


def gen_center_mask(ratio: float, size: int) -> np.ndarray:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"center mask ratio must lie in (0, 1), got {ratio}")
    side = min(size, int(round(size * math.sqrt(ratio))))
    start = (size - side) // 2
    m = np.zeros((size, size))
    m[start:start + side, start:start + side] = 1.0
    return m


def _segment_distance(yy, xx, p0, p1) -> np.ndarray:
    d = p1 - p0
    ll = float(d @ d)
    if ll == 0.0:
        return np.hypot(yy - p0[0], xx - p0[1])
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / ll, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def _stroke(rng: np.random.Generator, spec: MaskSpec, size: int, scale: float = 1.0) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    radius = rng.uniform(*spec.width) * size * scale
    n = int(rng.integers(spec.walk[0], spec.walk[1] + 1))
    p = rng.uniform(0, size, size=2)
    angle = rng.uniform(0, 2 * math.pi)
    out = np.zeros((size, size), dtype=bool)
    for _ in range(n):
        angle += rng.uniform(-1.2, 1.2)
        step = rng.uniform(0.1, 0.35) * size
        q = np.clip(p + step * np.array([math.sin(angle), math.cos(angle)]), 0, size)
        out |= _segment_distance(yy, xx, p, q) <= radius
        p = q
    return out


def _erode(m: np.ndarray) -> np.ndarray:
    p = np.pad(m, 1, constant_values=False)
    return m & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]


def gen_irregular_mask(spec: MaskSpec, size: int, max_rounds: int = 100) -> np.ndarray:
    """Union of random-walk brush strokes with hole fraction inside ``[spec.lo, spec.hi]``.

    A target fraction is drawn uniformly from the bounds; strokes are added
    until it is reached, and the hole is eroded (or topped up with thin
    strokes) until the fraction lands inside the bounds.
    """
    if spec.kind != "irregular":
        raise ValueError("gen_irregular_mask needs an irregular MaskSpec")
    rng = np.random.default_rng([spec.seed, size])
    target = rng.uniform(spec.lo, spec.hi)
    m = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(spec.strokes[0], spec.strokes[1] + 1))):
        m |= _stroke(rng, spec, size)
    total = size * size
    for _ in range(max_rounds):
        frac = m.sum() / total
        if spec.lo <= frac <= spec.hi and frac >= target:
            return m.astype(np.float64)
        if frac < target:
            grown = m | _stroke(rng, spec, size, scale=1.0 if target - frac > 0.1 else 0.5)
            if grown.sum() / total > spec.hi and spec.lo <= frac:
                # overshooting from inside the bounds: settle for what we have
                return m.astype(np.float64)
            m = grown
        else:
            eroded = _erode(m)
            m = eroded if eroded.sum() / total >= spec.lo else m & ~_stroke(rng, spec, size, scale=0.5)
    frac = m.sum() / total
    if spec.lo <= frac <= spec.hi:
        return m.astype(np.float64)
    raise MaskGenerationError(f"hole fraction {frac:.3f} outside [{spec.lo}, {spec.hi}] after {max_rounds} rounds")


def generate_mask(spec: MaskSpec, size: int) -> np.ndarray:
    if spec.kind == "center":
        return gen_center_mask(spec.lo, size)
    return gen_irregular_mask(spec, size)


def mask_fraction(m: np.ndarray) -> float:
    return float(np.mean(m))
