"""Held-out evaluation, the masked-input baseline and the mask-robustness grid."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .masks import MaskSpec, generate_mask
from .metrics import batch_psnr, ssim
from .scenes import make_dataset, split_seeds

EVAL_BATCH = 16


@dataclass
class EvalResult:
    psnr: float
    ssim: float
    baseline_psnr: float
    baseline_ssim: float
    count: int

    def rows(self) -> list[list]:
        return [["composited", repr(self.psnr), repr(self.ssim), self.count],
                ["masked_input", repr(self.baseline_psnr), repr(self.baseline_ssim), self.count]]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "psnr", "ssim", "count"])
            w.writerows(self.rows())


def eval_masks(spec: MaskSpec, seeds, size: int) -> np.ndarray:
    """One mask per scene, seeded by the scene seed so every model sees the same holes."""
    return np.stack([generate_mask(spec.with_seed(int(s)), size) for s in seeds])


def evaluate(model, cfg, spec: MaskSpec | None = None, n_scenes: int | None = None, split: str = "heldout",
             z_seed: int = 0) -> EvalResult:
    """Mean PSNR/SSIM of composited outputs and of the masked input itself."""
    n = n_scenes or cfg.eval_scenes
    if split not in ("heldout", "train"):
        raise ValueError(f"split must be 'heldout' or 'train', got {split!r}")
    seeds = split_seeds(n, held_out=(split == "heldout"))
    images, captions = make_dataset(seeds, cfg.image_size)
    spec = spec or cfg.mask_spec()
    masks = eval_masks(spec, seeds, cfg.image_size)
    z = np.random.default_rng(z_seed).standard_normal((n, cfg.noise_dim))
    outs = []
    for i in range(0, n, EVAL_BATCH):
        sl = slice(i, i + EVAL_BATCH)
        outs.append(model.inpaint(images[sl], masks[sl], captions[sl], z[sl]).composited.data)
    comp = np.concatenate(outs)
    masked = images * (1.0 - masks[:, None])
    return EvalResult(batch_psnr(comp, images), ssim(comp, images), batch_psnr(masked, images),
                      ssim(masked, images), n)


@dataclass
class MaskBiasReport:
    """PSNR grid: rows are training regimes, columns evaluation masks."""

    grid: dict[tuple[str, str], float]

    def gap(self, trained: str) -> float:
        return self.grid[(trained, "center")] - self.grid[(trained, "irregular")]

    def shows_bias(self) -> bool:
        return self.gap("center") > 0 and self.gap("diverse") < self.gap("center")

    def table(self) -> str:
        lines = ["trained\\eval  center  irregular  gap"]
        for t in ("center", "diverse"):
            lines.append(f"{t:<13} {self.grid[(t, 'center')]:7.3f} {self.grid[(t, 'irregular')]:9.3f}"
                         f" {self.gap(t):6.3f}")
        return "\n".join(lines)


def mask_bias_experiment(center_ckpt, diverse_ckpt, n_scenes: int | None = None) -> MaskBiasReport:
    """Evaluate a center-trained and a diverse-trained checkpoint under both mask families."""
    from ..checkpoint import load_model

    grid = {}
    for name, path in (("center", center_ckpt), ("diverse", diverse_ckpt)):
        if path is None or not Path(path).is_file():
            raise FileNotFoundError(f"missing {name}-trained checkpoint: {path}")
        cfg, model, _ = load_model(path)
        center = MaskSpec("center", cfg.center_ratio, cfg.center_ratio)
        irregular = MaskSpec("irregular", cfg.lo, cfg.hi)
        for label, spec in (("center", center), ("irregular", irregular)):
            grid[(name, label)] = evaluate(model, cfg, spec, n_scenes).psnr
    return MaskBiasReport(grid)
