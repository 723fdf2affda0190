"""Run configuration: sectioned ``key = value`` text, validated field by field."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .harness.masks import MaskSpec

OUTPUT_DIR_ENV = "DAFTGAN_OUTPUT_DIR"
LEGAL_DEPTHS = (3, 4, 5)  # S in {16, 32, 64}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``section.key``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "runs")


# (section, key, type); field names are ``key``
SCHEMA = [
    ("model", "image_size", int), ("model", "depth", int), ("model", "channels", "ints"),
    ("model", "spatial_channels", int), ("model", "text_dim", int), ("model", "text_init_scale", float),
    ("model", "noise_dim", int), ("model", "disc_channels", int), ("model", "disc_max_channels", int),
    ("loss", "lambda_rec", float), ("loss", "lambda_damsm", float), ("loss", "gp_k", float),
    ("loss", "gp_p", float),
    ("optim", "lr_g", float), ("optim", "lr_d", float), ("optim", "beta1", float), ("optim", "beta2", float),
    ("train", "batch_size", int), ("train", "steps", int), ("train", "train_scenes", int),
    ("train", "eval_scenes", int), ("train", "checkpoint_every", int),
    ("mask", "kind", str), ("mask", "lo", float), ("mask", "hi", float), ("mask", "center_ratio", float),
    ("seed", "master", int),
    ("output", "dir", str),
]


@dataclass
class Config:
    image_size: int = 32
    depth: int = 4
    channels: tuple[int, ...] = (16, 32, 32, 32)
    spatial_channels: int = 16
    text_dim: int = 32
    text_init_scale: float = 1.0  # trained runs; the bare encoder defaults to 0.02
    noise_dim: int = 32
    disc_channels: int = 16
    disc_max_channels: int = 64
    lambda_rec: float = 0.2
    lambda_damsm: float = 0.01
    gp_k: float = 2.0
    gp_p: float = 6.0
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch_size: int = 8
    steps: int = 2000
    train_scenes: int = 2048
    eval_scenes: int = 200
    checkpoint_every: int = 500
    kind: str = "irregular"
    lo: float = 0.10
    hi: float = 0.70
    center_ratio: float = 0.25
    master: int = 0
    dir: str = field(default_factory=_default_output_dir)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)

    def validate(self) -> "Config":
        if self.depth not in LEGAL_DEPTHS:
            raise ConfigError("model.depth", f"must be one of {LEGAL_DEPTHS}, got {self.depth}")
        expected = 4 * 2 ** (self.depth - 1)
        if self.image_size != expected:
            raise ConfigError("model.image_size",
                              f"S = 4*2^(L-1) requires image_size {expected} for depth {self.depth}, "
                              f"got {self.image_size}")
        if len(self.channels) != self.depth or min(self.channels) < 1:
            raise ConfigError("model.channels", f"needs {self.depth} positive widths, got {list(self.channels)}")
        for key in ("spatial_channels", "text_dim", "noise_dim", "disc_channels", "disc_max_channels",
                    "batch_size", "train_scenes", "eval_scenes", "checkpoint_every"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{self._section(key)}.{key}", "must be >= 1")
        if not self.text_init_scale > 0:
            raise ConfigError("model.text_init_scale", f"must be > 0, got {self.text_init_scale}")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size", "mismatched-caption pairs need a batch of at least 2")
        if self.steps < 0:
            raise ConfigError("train.steps", "must be >= 0")
        for key in ("lambda_rec", "lambda_damsm", "gp_k", "gp_p", "lr_g", "lr_d"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{self._section(key)}.{key}", "must be >= 0")
        for key in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"optim.{key}", "must lie in [0, 1)")
        if self.kind not in ("irregular", "center"):
            raise ConfigError("mask.kind", f"must be 'irregular' or 'center', got {self.kind!r}")
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ConfigError("mask.lo", f"bounds must satisfy 0 <= lo <= hi <= 1, got [{self.lo}, {self.hi}]")
        if not 0.0 < self.center_ratio < 1.0:
            raise ConfigError("mask.center_ratio", "must lie in (0, 1)")
        return self

    @staticmethod
    def _section(key: str) -> str:
        return next(sec for sec, k, _ in SCHEMA if k == key)

    def mask_spec(self, seed: int = 0) -> MaskSpec:
        if self.kind == "center":
            return MaskSpec("center", self.center_ratio, self.center_ratio, seed=seed)
        return MaskSpec("irregular", self.lo, self.hi, seed=seed)

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **kw)

    # text form
    def to_text(self) -> str:
        lines, current = [], None
        for sec, key, typ in SCHEMA:
            if sec != current:
                if current is not None:
                    lines.append("")
                lines.append(f"[{sec}]")
                current = sec
            val = getattr(self, key)
            if typ == "ints":
                text = ", ".join(str(v) for v in val)
            elif typ is float:
                text = repr(float(val))
            else:
                text = str(val)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, validate: bool = True) -> "Config":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("config", f"cannot parse: {exc}") from exc
        known = {(sec, key) for sec, key, _ in SCHEMA}
        for sec in parser.sections():
            for key in parser[sec]:
                if (sec, key) not in known:
                    raise ConfigError(f"{sec}.{key}", "unknown field")
        values = {}
        for sec, key, typ in SCHEMA:
            if not parser.has_option(sec, key):
                continue
            raw = parser.get(sec, key).strip()
            try:
                if typ == "ints":
                    values[key] = tuple(int(v) for v in raw.replace(",", " ").split())
                else:
                    values[key] = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"{sec}.{key}", f"cannot read {raw!r} as {getattr(typ, '__name__', typ)}") from exc
        names = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in values.items() if k in names})
        return cfg.validate() if validate else cfg

    @classmethod
    def load(cls, path) -> "Config":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_text(p.read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def parse_config(text: str) -> Config:
    return Config.from_text(text)


def serialize_config(cfg: Config) -> str:
    return cfg.to_text()
