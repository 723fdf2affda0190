"""scikit-learn style wrapper around the trainer.

``X`` is an image batch ``[N,3,S,S]`` in [-1, 1]; captions play the role of
``y`` in ``fit`` and are passed explicitly to ``predict``/``score`` along with
the hole masks ``[N,S,S]`` (1 = hole).
"""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import Config
from .harness.metrics import batch_psnr

_PARAMS = [f.name for f in fields(Config) if f.name != "dir"]


def _check_images(X, size: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[1:] != (3, size, size):
        raise ValueError(f"expected images of shape [N,3,{size},{size}], got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain NaN or infinity")
    return X


def _check_masks(masks, n: int, size: int) -> np.ndarray:
    m = np.asarray(masks, dtype=np.float64)
    if m.shape != (n, size, size):
        raise ValueError(f"expected masks of shape [{n},{size},{size}], got {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask entries must be 0 (valid) or 1 (hole)")
    return m


def _check_captions(captions, n: int) -> list[str]:
    captions = [str(c) for c in captions]
    if len(captions) != n:
        raise ValueError(f"need one caption per image ({n}), got {len(captions)}")
    return captions


class DaftInpainter(BaseEstimator):
    """Text-guided inpainting estimator; hyper-parameters mirror :class:`Config`."""

    def __init__(self, image_size=32, depth=4, channels=(16, 32, 32, 32), spatial_channels=16, text_dim=32,
                 text_init_scale=1.0, noise_dim=32, disc_channels=16, disc_max_channels=64, lambda_rec=0.2,
                 lambda_damsm=0.01, gp_k=2.0, gp_p=6.0, lr_g=1e-4, lr_d=4e-4, beta1=0.0, beta2=0.9, batch_size=8, steps=2000,
                 train_scenes=2048, eval_scenes=200, checkpoint_every=500, kind="irregular", lo=0.10, hi=0.70,
                 center_ratio=0.25, master=0):
        self.image_size = image_size
        self.depth = depth
        self.channels = channels
        self.spatial_channels = spatial_channels
        self.text_dim = text_dim
        self.text_init_scale = text_init_scale
        self.noise_dim = noise_dim
        self.disc_channels = disc_channels
        self.disc_max_channels = disc_max_channels
        self.lambda_rec = lambda_rec
        self.lambda_damsm = lambda_damsm
        self.gp_k = gp_k
        self.gp_p = gp_p
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.steps = steps
        self.train_scenes = train_scenes
        self.eval_scenes = eval_scenes
        self.checkpoint_every = checkpoint_every
        self.kind = kind
        self.lo = lo
        self.hi = hi
        self.center_ratio = center_ratio
        self.master = master

    def to_config(self) -> Config:
        return Config(**{k: getattr(self, k) for k in _PARAMS}).validate()

    @classmethod
    def from_config(cls, cfg: Config) -> "DaftInpainter":
        return cls(**{k: getattr(cfg, k) for k in _PARAMS})

    def fit(self, X, y=None):
        """Train on images ``X`` with captions ``y``; with ``X=None`` the synthetic scenes are used."""
        from .harness.train import Trainer

        cfg = self.to_config()
        if X is None:
            trainer = Trainer(cfg)
        else:
            X = _check_images(X, cfg.image_size)
            if y is None:
                raise ValueError("captions (y) are required when images are given")
            trainer = Trainer(cfg, X, _check_captions(y, len(X)))
        self.history_ = trainer.run()
        self.model_ = trainer.model
        self.config_ = cfg
        self.n_steps_ = trainer.step
        return self

    def predict(self, X, masks, captions, seed: int = 0) -> np.ndarray:
        """Composited inpaintings ``[N,3,S,S]``; hole pixels are generated, the rest copied."""
        check_is_fitted(self, "model_")
        s = self.config_.image_size
        X = _check_images(X, s)
        m = _check_masks(masks, len(X), s)
        captions = _check_captions(captions, len(X))
        z = np.random.default_rng(seed).standard_normal((len(X), self.config_.noise_dim))
        return self.model_.inpaint(X, m, captions, z).composited.data

    def score(self, X, masks, captions, seed: int = 0) -> float:
        """Mean per-image PSNR (dB) of the inpaintings against ``X``."""
        return batch_psnr(self.predict(X, masks, captions, seed), _check_images(X, self.config_.image_size))
