"""scikit-learn style wrappers around the windowing, scaling and model code.

``X`` is always a sequence of :class:`~insyn.preprocess.SampleWindow`.
"""
from __future__ import annotations

from typing import List, Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import MetricReport, PredictionSet, evaluate_split, predict_windows
from .model import Ablation, InSyn, LossWeights, ModelConfig, collate, generator_decode, seqcvae_sample
from .preprocess import FeatureStats, SampleWindow, apply_stats, fit_stats
from .training import LossRecord, TrainConfig, train_generator, train_seqcvae
from .validation import check_windows


class InteractionScaler(TransformerMixin, BaseEstimator):
    """Min-max scaling of reciprocal neighbor distances, fitted on training windows."""

    def fit(self, X, y=None):
        X = check_windows(X)
        self.stats_ = fit_stats(X)
        return self

    def transform(self, X) -> List[SampleWindow]:
        check_is_fitted(self, "stats_")
        return [apply_stats(w, self.stats_) for w in check_windows(X)]


class InSynPredictor(BaseEstimator):
    """Goal-driven trajectory predictor: fit trains both networks, predict
    returns one trajectory per window from the latent mode goal."""

    def __init__(self, model_dim=128, heads=4, encoder_layers=2, decoder_layers=2, ff_dim=256,
                 neighbor_dim=128, latent_dim=256, cvae_hidden=256, epochs=50, cvae_epochs=None,
                 batch_size=32, lr_generator=1e-4, lr_cvae=1e-3, recon_weight=1.0, pred_weight=1.0,
                 kl_weight=5.0, clip_norm=1.0, ablation="full", k=20, random_state=0,
                 dtype="float32"):
        self.model_dim = model_dim
        self.heads = heads
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.ff_dim = ff_dim
        self.neighbor_dim = neighbor_dim
        self.latent_dim = latent_dim
        self.cvae_hidden = cvae_hidden
        self.epochs = epochs
        self.cvae_epochs = cvae_epochs
        self.batch_size = batch_size
        self.lr_generator = lr_generator
        self.lr_cvae = lr_cvae
        self.recon_weight = recon_weight
        self.pred_weight = pred_weight
        self.kl_weight = kl_weight
        self.clip_norm = clip_norm
        self.ablation = ablation
        self.k = k
        self.random_state = random_state
        self.dtype = dtype

    def _model_config(self) -> ModelConfig:
        return ModelConfig(model_dim=self.model_dim, heads=self.heads, encoder_layers=self.encoder_layers,
                           decoder_layers=self.decoder_layers, ff_dim=self.ff_dim,
                           neighbor_dim=self.neighbor_dim, latent_dim=self.latent_dim,
                           cvae_hidden=self.cvae_hidden, seed=self.random_state)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr_generator=self.lr_generator, lr_cvae=self.lr_cvae, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.random_state,
                           weights=LossWeights(self.recon_weight, self.pred_weight, self.kl_weight),
                           ablation=Ablation.named(self.ablation), clip_norm=self.clip_norm,
                           dtype=self.dtype)

    def fit(self, X, y=None, scaler: Optional[InteractionScaler] = None, cvae: Optional[InSyn] = None):
        """Train on raw (un-normalized) windows.

        Pass a fitted ``scaler`` to reuse statistics, or ``cvae`` to copy an
        already trained goal sampler instead of training a new one.
        """
        X = check_windows(X)
        self.scaler_ = scaler if scaler is not None else InteractionScaler().fit(X)
        Xn = self.scaler_.transform(X)
        cfg = self._train_config()
        self.model_ = InSyn(self._model_config(), dtype=cfg.torch_dtype)
        gen = train_generator(Xn, cfg, self.model_)
        if cvae is not None:
            self.model_.cvae.load_state_dict(cvae.cvae.state_dict())
            cv_curve: List[LossRecord] = []
        else:
            cv_curve = train_seqcvae(Xn, cfg, self.model_, epochs=self.cvae_epochs).curve
        self.curve_ = gen.curve + cv_curve
        return self

    @property
    def stats_(self) -> FeatureStats:
        return self.scaler_.stats_

    def _prepare(self, X) -> List[SampleWindow]:
        check_is_fitted(self, "model_")
        return self.scaler_.transform(X)

    def predict(self, X) -> np.ndarray:
        """``(N, 12, 2)`` window-local trajectories decoded toward the z = 0 goal."""
        Xn = self._prepare(X)
        ab = Ablation.named(self.ablation)
        batch = collate(Xn, ab, dtype=next(self.model_.parameters()).dtype)
        goals = seqcvae_sample(self.model_, batch["obs"], 1, zero_latent=True)[:, 0]
        out = generator_decode(self.model_, batch["obs"], batch["states"], batch["feats"], goals,
                               use_ssos=ab.use_ssos)
        return out.double().numpy()

    def sample(self, X, k: Optional[int] = None, seed: int = 0) -> List[PredictionSet]:
        return predict_windows(self.model_, self._prepare(X), k or self.k, seed, Ablation.named(self.ablation))

    def evaluate(self, X, k: Optional[int] = None, seed: int = 0, goals=None) -> MetricReport:
        return evaluate_split(self.model_, self._prepare(X), k or self.k, seed,
                              Ablation.named(self.ablation), goals=goals)[0]

    def score(self, X, y=None) -> float:
        """Negative best-of-K ADE (higher is better)."""
        return -self.evaluate(X).ade
