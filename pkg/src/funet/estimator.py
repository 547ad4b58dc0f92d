"""scikit-learn compatible wrappers around the motion-mask and network stages.

``MotionMaskExtractor`` turns frame sequences into fused 4-channel inputs;
``FUNetSegmenter`` fits the encoder-decoder on them. Chained with
:func:`make_funet_pipeline` they form the whole predictor::

    pipe = make_funet_pipeline(epochs=10)
    pipe.fit([frames_a, frames_b], [masks_a, masks_b])
    masks = pipe.predict(frames_c)
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fused, check_masks, check_sequences
from .evaluation import dice
from .flow import HSParams
from .model import FUNetConfig, backward, forward, init_params, predict_logits
from .motionmask import MaskParams
from .pipeline import fuse_sequence, sequence_masks
from .tensorops import sigmoid
from .training import OptState, TrainConfig, bce_with_logits, rmsprop_step


class MotionMaskExtractor(TransformerMixin, BaseEstimator):
    """Append a thresholded flow-magnitude channel to each RGB frame.

    Stateless: ``fit`` only validates. ``transform`` takes one ``(N, H, W, 3)``
    sequence or a list of them and returns ``(sum N, 4, H, W)`` float32.
    Flows never cross sequence boundaries.
    """

    def __init__(self, alpha=0.4, normalize=False, smoothness=15.0, iterations=100, levels=3, warps=2):
        self.alpha = alpha
        self.normalize = normalize
        self.smoothness = smoothness
        self.iterations = iterations
        self.levels = levels
        self.warps = warps

    def fit(self, X, y=None):
        check_sequences(X)
        self.hs_params_ = HSParams(self.smoothness, self.iterations, self.levels, self.warps)
        self.mask_params_ = MaskParams(self.alpha, self.normalize)
        return self

    def motion_masks(self, X) -> list:
        hs = HSParams(self.smoothness, self.iterations, self.levels, self.warps)
        mp = MaskParams(self.alpha, self.normalize)
        out = []
        for seq in check_sequences(X):
            out.extend(sequence_masks(list(seq), hs, mp))
        return out

    def transform(self, X):
        seqs = check_sequences(X)
        frames = [f for seq in seqs for f in seq]
        return fuse_sequence(frames, self.motion_masks(seqs))

    def __sklearn_is_fitted__(self):
        return True


class FUNetSegmenter(BaseEstimator):
    """Encoder-decoder trained with BCE-with-logits and RMSProp.

    ``X`` is ``(N, 4, H, W)`` fused input (or a list of such blocks), ``y`` is
    ``(N, H, W)`` binary masks. Pixels with ``sigmoid(logit) >= threshold``
    are predicted foreground.

    Attributes set by ``fit``: ``params_``, ``config_``, ``history_`` (one dict
    per epoch) and ``best_epoch_`` (0 when no epoch ran).
    """

    def __init__(
        self,
        widths=(16, 32),
        bottleneck=64,
        learning_rate=1e-4,
        weight_decay=1e-8,
        momentum=0.9,
        rms_decay=0.99,
        eps=1e-8,
        epochs=10,
        batch_size=1,
        threshold=0.5,
        random_state=0,
    ):
        self.widths = widths
        self.bottleneck = bottleneck
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.rms_decay = rms_decay
        self.eps = eps
        self.epochs = epochs
        self.batch_size = batch_size
        self.threshold = threshold
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            momentum=self.momentum,
            rms_decay=self.rms_decay,
            eps=self.eps,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.random_state,
        )

    def fit(self, X, y, X_val=None, y_val=None, on_epoch_end=None):
        """Train for ``epochs`` passes in seeded shuffled order.

        With validation data the parameters from the epoch with the highest
        mean validation Dice are kept (earliest on ties); otherwise the last.
        """
        config = FUNetConfig(widths=tuple(self.widths), bottleneck=self.bottleneck)
        X = check_fused(X, config.in_channels, config.divisor)
        y = check_masks(y, (X.shape[0],) + X.shape[2:])
        has_val = X_val is not None
        if has_val:
            X_val = check_fused(X_val, config.in_channels, config.divisor)
            y_val = check_masks(y_val, (X_val.shape[0],) + X_val.shape[2:])
        tc = self._train_config()

        params = init_params(config, self.random_state)
        state = OptState.zeros_like(params)
        rng = np.random.default_rng(self.random_state)
        targets = y[:, None].astype(np.float32)

        self.config_ = config
        self.history_ = []
        self.best_epoch_ = 0
        best = {k: v.copy() for k, v in params.items()}
        best_dice = -np.inf
        for epoch in range(1, tc.epochs + 1):
            order = rng.permutation(X.shape[0])
            losses = []
            for start in range(0, len(order), tc.batch_size):
                idx = np.sort(order[start : start + tc.batch_size]) if tc.batch_size > 1 else order[start : start + 1]
                logits, cache = forward(params, X[idx], config)
                loss, grad = bce_with_logits(logits, targets[idx])
                rmsprop_step(params, backward(params, cache, grad, config), state, tc)
                losses.append(loss)
            record = {"epoch": epoch, "mean_train_loss": float(np.mean(losses))}
            if has_val:
                self.params_ = params
                record["val_dice"] = self.score(X_val, y_val)
                if record["val_dice"] > best_dice:
                    best_dice = record["val_dice"]
                    best = {k: v.copy() for k, v in params.items()}
                    self.best_epoch_ = epoch
            else:
                record["val_dice"] = None
                best = params
                self.best_epoch_ = epoch
            self.history_.append(record)
            if on_epoch_end is not None:
                on_epoch_end(record)
        self.params_ = {k: v.copy() for k, v in best.items()}
        return self

    def decision_function(self, X) -> np.ndarray:
        """Logits, ``(N, H, W)``."""
        check_is_fitted(self, "params_")
        X = check_fused(X, self.config_.in_channels, self.config_.divisor)
        return np.concatenate([predict_logits(self.params_, X[k : k + 1], self.config_)[:, 0] for k in range(len(X))])

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        """Mean per-frame Dice."""
        pred = self.predict(X)
        y = check_masks(y, pred.shape)
        return float(np.mean([dice(p, t) for p, t in zip(pred, y)]))


def make_funet_pipeline(alpha=0.4, smoothness=15.0, iterations=100, levels=3, warps=2, **segmenter_params) -> Pipeline:
    return Pipeline(
        [
            ("motion", MotionMaskExtractor(alpha=alpha, smoothness=smoothness, iterations=iterations, levels=levels, warps=warps)),
            ("segment", FUNetSegmenter(**segmenter_params)),
        ]
    )
