"""Synthetic data, masks, metrics, training and evaluation."""
from .evaluate import EvalResult, MaskBiasReport, evaluate, mask_bias_experiment
from .masks import MaskGenerationError, MaskSpec, gen_center_mask, gen_irregular_mask, generate_mask
from .metrics import PSNR_CAP, batch_psnr, cap_psnr, psnr, ssim
from .scenes import ShapeScene, export_dataset, load_dataset, make_dataset, render_scene, split_seeds
from .train import DaftGAN, Trainer, train

__all__ = ["EvalResult", "MaskBiasReport", "evaluate", "mask_bias_experiment", "MaskGenerationError", "MaskSpec",
           "gen_center_mask", "gen_irregular_mask", "generate_mask", "PSNR_CAP", "batch_psnr", "cap_psnr", "psnr",
           "ssim", "ShapeScene", "export_dataset", "load_dataset", "make_dataset", "render_scene", "split_seeds", "DaftGAN", "Trainer", "train"]
