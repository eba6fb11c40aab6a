"""Scikit-learn style wrapper around the lifting network.

`PoseLifter3D` exposes the familiar fit/predict/get_params surface so the
model drops into sklearn pipelines and grid searches.  Samples are whole
windows: X has shape (n_windows, T, 17, 2) and y has shape
(n_windows, T, 17, 3).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .model import ENCODERS, EncoderConfig, forward, init_params
from .skeleton import NUM_JOINTS, default_skeleton
from .tensor import Tensor
from .training import AdamState, TrainConfig, adam_step, flip_pose, lr_at_epoch, mpjpe_loss
from . import tensor as T


def _validate_windows(X, channels: int, frames: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[2] != NUM_JOINTS or X.shape[3] != channels:
        raise ValueError(
            f"expected (n_windows, T, {NUM_JOINTS}, {channels}), got {X.shape}")
    if frames is not None and X.shape[1] != frames:
        raise ValueError(f"window length {X.shape[1]} != configured frames {frames}")
    if not np.isfinite(X).all():
        raise ValueError("input contains non-finite values")
    return X


class PoseLifter3D(RegressorMixin, BaseEstimator):
    """2D-to-3D pose sequence regressor with an sklearn estimator API."""

    def __init__(self, frames=9, dim=32, layers=6, heads=8, mlp_ratio=4,
                 encoder_order=ENCODERS, enabled_encoders=ENCODERS,
                 fusion_enabled=True, epochs=20, base_lr=0.001,
                 lr_decay_factor=0.8, lr_decay_every=20, batch_size=8,
                 flip_augment=True, random_state=0):
        self.frames = frames
        self.dim = dim
        self.layers = layers
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.encoder_order = encoder_order
        self.enabled_encoders = enabled_encoders
        self.fusion_enabled = fusion_enabled
        self.epochs = epochs
        self.base_lr = base_lr
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_every = lr_decay_every
        self.batch_size = batch_size
        self.flip_augment = flip_augment
        self.random_state = random_state

    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            frames=self.frames, dim=self.dim, layers=self.layers,
            heads=self.heads, mlp_ratio=self.mlp_ratio,
            encoder_order=tuple(self.encoder_order),
            enabled_encoders=tuple(self.enabled_encoders),
            fusion_enabled=self.fusion_enabled)

    def fit(self, X, y):
        X = _validate_windows(X, 2)
        y = _validate_windows(y, 3, frames=X.shape[1])
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} windows, y has {y.shape[0]}")
        enc_cfg = self._encoder_config()
        if X.shape[1] != enc_cfg.frames:
            raise ValueError(f"window length {X.shape[1]} != frames={enc_cfg.frames}")
        train_cfg = TrainConfig(
            epochs=self.epochs, base_lr=self.base_lr,
            lr_decay_factor=self.lr_decay_factor, lr_decay_every=self.lr_decay_every,
            batch_size=self.batch_size, seed=self.random_state,
            frames=self.frames, flip_augment=self.flip_augment)
        _, partition = default_skeleton()
        rng = np.random.Generator(np.random.PCG64(self.random_state))
        params = init_params(enc_cfg, partition, seed=self.random_state)
        state = AdamState()
        for epoch in range(self.epochs):
            lr = lr_at_epoch(epoch, train_cfg)
            order = rng.permutation(X.shape[0])
            for lo in range(0, len(order), self.batch_size):
                ids = order[lo:lo + self.batch_size]
                xb, yb = X[ids], y[ids]
                if self.flip_augment:
                    flip = rng.random(len(ids)) < 0.5
                    xb = np.where(flip[:, None, None, None], flip_pose(xb), xb)
                    yb = np.where(flip[:, None, None, None], flip_pose(yb), yb)
                pred = forward(Tensor(xb), params, enc_cfg, partition)
                loss = T.scale(mpjpe_loss(pred, yb), 1.0 / len(ids))
                for p in params.values():
                    p.zero_grad()
                loss.backward()
                adam_step(params, state, lr)
        self.params_ = params
        self.partition_ = partition
        self.config_ = enc_cfg
        self.n_features_in_ = X.shape[1] * NUM_JOINTS * 2
        return self

    def predict(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError("PoseLifter3D is not fitted; call fit first")
        X = _validate_windows(X, 2, frames=self.config_.frames)
        return forward(Tensor(X), self.params_, self.config_, self.partition_).data

    def score(self, X, y):
        """Negative MPJPE (higher is better, sklearn convention)."""
        y = _validate_windows(y, 3)
        pred = self.predict(X)
        return -float(np.linalg.norm(pred - y, axis=-1).mean())
