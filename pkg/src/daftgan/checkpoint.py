"""Self-describing little-endian checkpoint files.

Layout::

    b"DAFTCKPT1"  u32 format version
    repeated sections: u16 name length, name (utf-8), u64 payload length, payload

Sections, in order: ``config`` (text), ``vocab`` (text), ``step`` (u64),
``rng`` (JSON of the numpy bit-generator state), ``params`` (tensor table),
``opt_g`` and ``opt_d`` (u64 step count, then the first- and second-moment
tensor tables). A tensor table is a u32 count followed by entries of u16
name length, name, u8 rank, u32 dims and raw float64 values.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .text import Vocabulary

MAGIC = b"DAFTCKPT1"
VERSION = 1
SECTIONS = ("config", "vocab", "step", "rng", "params", "opt_g", "opt_d")


class CheckpointError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data, self.pos, self.where = data, 0, where

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.where}: unexpected end of data")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def done(self) -> bool:
        return self.pos == len(self.data)


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_table(table: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(table))]
    for name, arr in table.items():
        arr = np.asarray(arr, dtype="<f8")
        parts.append(_pack_name(name))
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def _read_table(r: _Reader) -> dict[str, np.ndarray]:
    (count,) = r.unpack("I")
    table = {}
    for _ in range(count):
        (n,) = r.unpack("H")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("B")
        shape = r.unpack(f"{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        table[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    return table


@dataclass
class Checkpoint:
    config_text: str
    vocab_text: str
    step: int
    rng_state: dict
    params: dict[str, np.ndarray]
    opt_g: dict = field(default_factory=dict)
    opt_d: dict = field(default_factory=dict)

    @property
    def config(self) -> Config:
        return Config.from_text(self.config_text)

    def to_bytes(self) -> bytes:
        payloads = {
            "config": self.config_text.encode("utf-8"),
            "vocab": self.vocab_text.encode("utf-8"),
            "step": struct.pack("<Q", self.step),
            "rng": json.dumps(self.rng_state, sort_keys=True, separators=(",", ":")).encode("utf-8"),
            "params": _pack_table(self.params),
            "opt_g": struct.pack("<Q", self.opt_g["t"]) + _pack_table(self.opt_g["m"]) + _pack_table(self.opt_g["v"]),
            "opt_d": struct.pack("<Q", self.opt_d["t"]) + _pack_table(self.opt_d["m"]) + _pack_table(self.opt_d["v"]),
        }
        out = [MAGIC, struct.pack("<I", VERSION)]
        for name in SECTIONS:
            out.append(_pack_name(name) + struct.pack("<Q", len(payloads[name])) + payloads[name])
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(MAGIC):
            raise CheckpointError("not a checkpoint file (bad magic)")
        r = _Reader(data[len(MAGIC):], "checkpoint header")
        (version,) = r.unpack("I")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        sections = {}
        while not r.done():
            (n,) = r.unpack("H")
            name = r.take(n).decode("utf-8")
            (size,) = r.unpack("Q")
            sections[name] = r.take(size)
        missing = [s for s in SECTIONS if s not in sections]
        if missing:
            raise CheckpointError(f"checkpoint lacks sections {missing}")

        def opt(raw: bytes, name: str) -> dict:
            rr = _Reader(raw, name)
            (t,) = rr.unpack("Q")
            state = {"t": t, "m": _read_table(rr), "v": _read_table(rr)}
            if not rr.done():
                raise CheckpointError(f"{name}: trailing bytes")
            return state

        pr = _Reader(sections["params"], "params")
        params = _read_table(pr)
        if not pr.done():
            raise CheckpointError("params: trailing bytes")
        return cls(
            config_text=sections["config"].decode("utf-8"),
            vocab_text=sections["vocab"].decode("utf-8"),
            step=struct.unpack("<Q", sections["step"])[0],
            rng_state=json.loads(sections["rng"].decode("utf-8")),
            params=params,
            opt_g=opt(sections["opt_g"], "opt_g"),
            opt_d=opt(sections["opt_d"], "opt_d"),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return cls.from_bytes(p.read_bytes())


def _check_shapes(declared: dict[str, np.ndarray], own: dict, what: str) -> None:
    if list(declared) != list(own):
        extra, missing = set(declared) - set(own), set(own) - set(declared)
        raise CheckpointError(f"{what}: parameter names differ (unexpected {sorted(extra)}, missing {sorted(missing)})")
    for name, arr in declared.items():
        if arr.shape != own[name].shape:
            raise CheckpointError(f"{what}: {name} has shape {arr.shape}, model expects {own[name].shape}")


def checkpoint_from_trainer(trainer) -> Checkpoint:
    return Checkpoint(
        config_text=trainer.cfg.to_text(),
        vocab_text=trainer.model.text.vocab.to_text(),
        step=trainer.step,
        rng_state=trainer.rng.bit_generator.state,
        params=trainer.model.state_dict(),
        opt_g=trainer.opt_g.state(),
        opt_d=trainer.opt_d.state(),
    )


def save_checkpoint(trainer, path) -> Checkpoint:
    ckpt = checkpoint_from_trainer(trainer)
    ckpt.save(path)
    return ckpt


def restore_model(ckpt: Checkpoint, model) -> None:
    own = dict(model.named_parameters())
    _check_shapes(ckpt.params, own, "params")
    if Vocabulary.from_text(ckpt.vocab_text) != model.text.vocab:
        raise CheckpointError("vocabulary in checkpoint differs from the model's")
    model.load_state_dict(ckpt.params)


def load_checkpoint(path_or_ckpt, trainer) -> Checkpoint:
    """Restore parameters, optimizer moments, RNG state and step into ``trainer``."""
    ckpt = path_or_ckpt if isinstance(path_or_ckpt, Checkpoint) else Checkpoint.load(path_or_ckpt)
    restore_model(ckpt, trainer.model)
    for opt, state, what in ((trainer.opt_g, ckpt.opt_g, "opt_g"), (trainer.opt_d, ckpt.opt_d, "opt_d")):
        for key in ("m", "v"):
            _check_shapes(state[key], opt.params, f"{what}.{key}")
        opt.load_state(state)
    trainer.rng.bit_generator.state = ckpt.rng_state
    trainer.step = ckpt.step
    return ckpt


def load_model(path):
    """Config and inference-ready model from a checkpoint file."""
    from .harness.train import DaftGAN

    ckpt = Checkpoint.load(path)
    cfg = ckpt.config
    model = DaftGAN(cfg)
    restore_model(ckpt, model)
    return cfg, model, ckpt
