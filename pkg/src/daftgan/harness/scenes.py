"""Synthetic captioned shape scenes.

Each scene is a light-gray canvas with one primary shape (described by the
caption) and up to two smaller distractor shapes drawn underneath it. Edges
are anti-aliased by 4x4 supersampling. Rendering is a pure function of
``(seed, size)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..text import COLORS, POSITIONS, SHAPES, SIZES
from .imageio import read_ppm, write_ppm

BACKGROUND = (0.8, 0.8, 0.8)  # on the [0, 1] scale
RGB = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.75, 0.2),
    "blue": (0.15, 0.25, 0.9),
    "yellow": (0.95, 0.85, 0.1),
    "white": (1.0, 1.0, 1.0),
    "black": (0.05, 0.05, 0.05),
}
CENTERS = {"left": (0.5, 0.27), "right": (0.5, 0.73), "top": (0.27, 0.5), "bottom": (0.73, 0.5),
           "center": (0.5, 0.5)}  # (row, col) as fractions of the image size
RADII = {"small": 0.14, "large": 0.24}
SUPERSAMPLE = 4
ALLOWED_SIZES = (16, 32, 64)


@dataclass(frozen=True)
class Shape:
    kind: str
    color: str
    size: str
    position: str
    cy: float
    cx: float
    radius: float

    def caption(self) -> str:
        return f"{self.size} {self.color} {self.kind} {self.position}"


@dataclass
class ShapeScene:
    image: np.ndarray  # [3, S, S] in [-1, 1]
    caption: str
    seed: int
    shapes: tuple[Shape, ...] = ()

    @property
    def primary(self) -> Shape | None:
        return self.shapes[-1] if self.shapes else None


def _coverage(shape: Shape, size: int) -> np.ndarray:
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / n
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dy, dx = yy - shape.cy, xx - shape.cx
    r = shape.radius
    if shape.kind == "circle":
        inside = dy * dy + dx * dx <= r * r
    elif shape.kind == "square":
        inside = (np.abs(dy) <= 0.85 * r) & (np.abs(dx) <= 0.85 * r)
    elif shape.kind == "bar":
        inside = (np.abs(dy) <= 0.35 * r) & (np.abs(dx) <= 1.2 * r)
    elif shape.kind == "triangle":
        # apex up, base at cy + r
        top, bottom = shape.cy - r, shape.cy + r
        half = (yy - top) / (2 * r) * r * 1.1
        inside = (yy >= top) & (yy <= bottom) & (np.abs(dx) <= half)
    else:
        raise ValueError(f"unknown shape kind {shape.kind!r}")
    return inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def render(shapes, size: int) -> np.ndarray:
    """Composite ``shapes`` (back to front) over the background; returns [3,S,S] in [-1,1]."""
    img = np.empty((3, size, size))
    img[:] = np.asarray(BACKGROUND)[:, None, None]
    for sh in shapes:
        a = _coverage(sh, size)
        col = np.asarray(RGB[sh.color])[:, None, None]
        img = img * (1.0 - a) + col * a
    return img * 2.0 - 1.0


def _random_shape(rng: np.random.Generator, distractor: bool) -> Shape:
    kind = SHAPES[rng.integers(len(SHAPES))]
    color = COLORS[rng.integers(len(COLORS))]
    size = "small" if distractor else SIZES[rng.integers(len(SIZES))]
    position = POSITIONS[rng.integers(len(POSITIONS))]
    cy, cx = CENTERS[position]
    jitter = rng.uniform(-0.04, 0.04, size=2)
    radius = RADII[size] * (0.7 if distractor else 1.0)
    return Shape(kind, color, size, position, cy + jitter[0], cx + jitter[1], radius)


def render_scene(seed: int, size: int = 32) -> ShapeScene:
    if size not in ALLOWED_SIZES:
        raise ValueError(f"scene size must be one of {ALLOWED_SIZES}, got {size}")
    rng = np.random.default_rng([seed, size])
    n_distract = int(rng.integers(0, 3))
    shapes = [_random_shape(rng, True) for _ in range(n_distract)]
    primary = _random_shape(rng, False)
    shapes.append(primary)
    return ShapeScene(render(shapes, size), primary.caption(), seed, tuple(shapes))


def is_held_out(seed: int, modulus: int = 10) -> bool:
    return seed % modulus == 0


def split_seeds(n: int, start: int = 0, held_out: bool = False) -> list[int]:
    """The first ``n`` seeds from ``start`` in the train (or held-out) split."""
    out, s = [], start
    while len(out) < n:
        if is_held_out(s) == held_out:
            out.append(s)
        s += 1
    return out


def make_dataset(seeds, size: int = 32) -> tuple[np.ndarray, list[str]]:
    scenes = [render_scene(s, size) for s in seeds]
    return np.stack([sc.image for sc in scenes]), [sc.caption for sc in scenes]


def export_dataset(seeds, size: int, directory) -> list[Path]:
    """Write ``scene_<seed>.ppm`` plus a ``scene_<seed>.txt`` caption sidecar per seed."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in seeds:
        sc = render_scene(int(s), size)
        stem = out / f"scene_{int(s):06d}"
        write_ppm(stem.with_suffix(".ppm"), sc.image)
        stem.with_suffix(".txt").write_text(sc.caption + "\n")
        paths.append(stem.with_suffix(".ppm"))
    return paths


def load_dataset(directory) -> tuple[np.ndarray, list[str]]:
    """Images and captions from a cache written by :func:`export_dataset` (sorted by file name)."""
    ppms = sorted(Path(directory).glob("*.ppm"))
    if not ppms:
        raise FileNotFoundError(f"no .ppm images in {directory}")
    images, captions = [], []
    for p in ppms:
        side = p.with_suffix(".txt")
        if not side.is_file():
            raise FileNotFoundError(f"caption sidecar missing for {p}")
        images.append(read_ppm(p))
        captions.append(side.read_text().strip())
    return np.stack(images), captions
