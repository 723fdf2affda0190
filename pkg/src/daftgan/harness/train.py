"""Alternating adversarial training: one discriminator step, then one generator step."""
from __future__ import annotations

import csv
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np

from ..adversary import (Discriminator, FeatureExtractor, LossWeights, attn_loss, d_loss, damsm_loss,
                         g_adv_loss, g_total_loss, mismatched_sentences, recon_loss)
from ..autograd import Module, Tensor, no_grad
from ..autograd.optim import Adam
from ..decoder import Generator
from ..text import TextEncoder
from .masks import generate_mask
from .metrics import batch_psnr, ssim
from .scenes import make_dataset, split_seeds

if TYPE_CHECKING:
    from ..config import Config

LOG_COLUMNS = ["step", "d_total", "g_total", "d_real", "d_fake", "d_mismatch", "d_penalty",
               "g_rec", "g_adv", "g_attn", "g_damsm", "psnr", "ssim"]


def _seeds(master: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(n)]


class DaftGAN(Module):
    """Text encoder, generator and discriminator built from one config."""

    def __init__(self, cfg: Config):
        s_text, s_gen, s_disc, s_feat = _seeds(cfg.master, 4)
        self.text = TextEncoder(dim=cfg.text_dim, seed=s_text, scale=cfg.text_init_scale)
        self.generator = Generator(cfg.depth, list(cfg.channels), cfg.text_dim, cfg.noise_dim,
                                   cfg.spatial_channels, seed=s_gen)
        self.discriminator = Discriminator(cfg.image_size, cfg.disc_channels, cfg.text_dim,
                                           cfg.disc_max_channels, seed=s_disc)
        self.features = FeatureExtractor(seed=s_feat)

    def generator_parameters(self):
        yield from self.text.named_parameters("text.")
        yield from self.generator.named_parameters("generator.")

    def inpaint(self, images, masks, captions, z):
        """Composited output for ``[N,3,S,S]`` images and ``[N,S,S]`` masks (no graph)."""
        with no_grad():
            text = self.text.encode_captions(captions)
            masked = images * (1.0 - masks[:, None])
            return self.generator(masked, masks, z, text)


@contextmanager
def frozen(module: Module):
    params = module.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def sample_masks(cfg: Config, seeds) -> np.ndarray:
    return np.stack([generate_mask(cfg.mask_spec(int(s)), cfg.image_size) for s in seeds])


@dataclass
class Batch:
    images: np.ndarray
    masks: np.ndarray
    captions: list[str]
    z: np.ndarray


class Trainer:
    """Owns the model, both optimizers, the data RNG and the step counter."""

    def __init__(self, cfg: Config, images: np.ndarray | None = None, captions: list[str] | None = None):
        self.cfg = cfg.validate()
        self.model = DaftGAN(cfg)
        self.weights = LossWeights(cfg.lambda_rec, cfg.lambda_damsm, cfg.gp_k, cfg.gp_p)
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = Adam(self.model.generator_parameters(), cfg.lr_g, betas)
        self.opt_d = Adam(self.model.discriminator.named_parameters("discriminator."), cfg.lr_d, betas)
        self.rng = np.random.default_rng(_seeds(cfg.master, 5)[4])
        self.step = 0
        if images is None:
            images, captions = make_dataset(split_seeds(cfg.train_scenes), cfg.image_size)
        if captions is None or len(captions) != len(images):
            raise ValueError("one caption per training image is required")
        if images.shape[1:] != (3, cfg.image_size, cfg.image_size):
            raise ValueError(f"training images must be [N,3,{cfg.image_size},{cfg.image_size}], got {images.shape}")
        self.images = np.asarray(images, dtype=np.float64)
        self.captions = list(captions)

    def next_batch(self) -> Batch:
        n = self.cfg.batch_size
        idx = self.rng.integers(0, len(self.images), size=n)
        mask_seeds = self.rng.integers(0, 2 ** 31, size=n)
        z = self.rng.standard_normal((n, self.cfg.noise_dim))
        return Batch(self.images[idx], sample_masks(self.cfg, mask_seeds), [self.captions[i] for i in idx], z)

    def train_step(self) -> dict[str, float]:
        m = self.model
        b = self.next_batch()
        x = Tensor(b.images)
        masked = Tensor(b.images * (1.0 - b.masks[:, None]))
        text = m.text.encode_captions(b.captions)
        out = m.generator(masked, b.masks, Tensor(b.z), text)

        self.opt_d.zero_grad()
        d_rep = d_loss(m.discriminator, x, out.composited.detach(), text.sentence.detach(),
                       mismatched_sentences(text), self.weights.k, self.weights.p)
        d_rep.check_finite()
        d_rep.total.backward()
        self.opt_d.step()

        self.opt_g.zero_grad()
        with frozen(m.discriminator):
            rec = recon_loss(out.composited, x, m.features)
            adv = g_adv_loss(m.discriminator, out.composited, text.sentence)
            attn = attn_loss(out.composited, x, out.attention)
            g_rep = g_total_loss(rec, adv, attn, damsm_loss(), self.weights)
            g_rep.check_finite()
            g_rep.total.backward()
        self.opt_g.step()
        self.step += 1

        row = {"step": self.step, **d_rep.components, **g_rep.components}
        row["psnr"] = batch_psnr(out.composited.data, b.images)
        row["ssim"] = ssim(out.composited.data, b.images)
        return row

    def run(self, steps: int | None = None, log_path=None, checkpoint_dir=None,
            on_step: Callable[[dict], None] | None = None) -> list[dict]:
        """Train until ``steps`` total steps; append rows to ``log_path`` if given."""
        from ..checkpoint import save_checkpoint

        target = self.cfg.steps if steps is None else steps
        rows = []
        writer, fh = None, None
        if log_path is not None:
            log_path = Path(log_path)
            fresh = not log_path.exists() or self.step == 0
            fh = open(log_path, "w" if fresh else "a", newline="")
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(LOG_COLUMNS)
        try:
            while self.step < target:
                row = self.train_step()
                rows.append(row)
                if writer is not None:
                    writer.writerow([row["step"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
                if on_step is not None:
                    on_step(row)
                if checkpoint_dir is not None and self.step % self.cfg.checkpoint_every == 0:
                    save_checkpoint(self, Path(checkpoint_dir) / f"step_{self.step:06d}.ckpt")
        finally:
            if fh is not None:
                fh.close()
        return rows


def train(cfg: Config, out_dir=None, resume=None, images=None, captions=None) -> Trainer:
    """Run a full training job, writing ``train_log.csv`` and ``final.ckpt`` under ``out_dir``."""
    from ..checkpoint import load_checkpoint, save_checkpoint

    out = Path(out_dir if out_dir is not None else cfg.dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(cfg, images, captions)
    if resume is not None:
        load_checkpoint(resume, trainer)
    trainer.run(log_path=out / "train_log.csv", checkpoint_dir=out)
    save_checkpoint(trainer, out / "final.ckpt")
    return trainer
