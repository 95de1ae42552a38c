"""scikit-learn style wrappers.

``CaCTransformer`` turns waveforms into network-ready spectrogram tensors and
back; ``UNetSeparator`` trains a U-Net on (mixture, vocals) pairs and
predicts vocals for new mixtures.  Both follow the estimator conventions
(constructor only stores parameters, learned state ends in ``_``), so
``get_params``/``set_params``/``clone`` work as usual.
"""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidInputError, check_signal
from .data import TrackPair
from .evaluation import sdr_track
from .spectral import StftParams, Waveform, analyze, synthesize
from .training import SpectrogramSeparator, TrainConfig, Trainer
from .unet import preset as get_preset

__all__ = ["CaCTransformer", "UNetSeparator"]


def _as_waveform(x, sample_rate):
    if isinstance(x, Waveform):
        return x
    return Waveform(check_signal(x, "waveform"), sample_rate)


class CaCTransformer(TransformerMixin, BaseEstimator):
    """Waveform (channels, samples) <-> spectrogram tensor.

    In ``cac`` mode the output has ``2 * channels`` real channels; in
    ``magnitude`` mode it has ``channels`` and the mixture phase of the last
    transformed signal is kept in ``phase_`` for :meth:`inverse_transform`.
    """

    def __init__(self, n_fft=2048, hop=1024, window="hann", mode="cac", sample_rate=44100):
        self.n_fft = n_fft
        self.hop = hop
        self.window = window
        self.mode = mode
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        w = _as_waveform(X, self.sample_rate)
        self.stft_params_ = StftParams(self.n_fft, self.hop, self.window)
        if self.mode not in ("cac", "magnitude"):
            raise InvalidInputError(f"mode must be 'cac' or 'magnitude', got {self.mode!r}")
        self.n_channels_ = w.channels
        return self

    def transform(self, X):
        check_is_fitted(self, "stft_params_")
        w = _as_waveform(X, self.sample_rate)
        if w.channels != self.n_channels_:
            raise InvalidInputError(
                f"fitted on {self.n_channels_} channel(s), got {w.channels}")
        tensor, phase = analyze(w, self.stft_params_, self.mode)
        self.phase_ = phase
        self.length_ = len(w)
        return tensor.data

    def inverse_transform(self, X, length=None, phase=None):
        check_is_fitted(self, "stft_params_")
        length = self.length_ if length is None else length
        if self.mode == "magnitude" and phase is None:
            phase = self.phase_
        return synthesize(np.asarray(X), self.stft_params_, length, self.mode, phase)


class UNetSeparator(BaseEstimator):
    """Singing-voice separator: ``fit(mixtures, vocals)`` then ``predict``.

    ``X`` is a sequence of mixtures and ``y`` the matching vocal stems, each a
    (channels, samples) array or :class:`~cacunet.spectral.Waveform`.
    ``n_fft``/``hop``/``mode`` override the preset when given.
    """

    def __init__(self, preset="tfctdf7", n_fft=None, hop=None, mode=None,
                 sample_rate=44100, n_steps=1000, lr=None, batch_size=8, clip_frames=128,
                 seed=42, chunk_frames=None):
        self.preset = preset
        self.n_fft = n_fft
        self.hop = hop
        self.mode = mode
        self.sample_rate = sample_rate
        self.n_steps = n_steps
        self.lr = lr
        self.batch_size = batch_size
        self.clip_frames = clip_frames
        self.seed = seed
        self.chunk_frames = chunk_frames

    def _model_config(self):
        cfg = get_preset(self.preset)
        if self.n_fft is not None:
            cfg = cfg.with_stft(self.n_fft, self.hop)
        elif self.hop is not None:
            cfg = cfg.with_stft(cfg.stft.n_fft, self.hop)
        if self.mode is not None and self.mode != cfg.mode:
            cfg = replace(cfg, mode=self.mode)
        return cfg

    def _pairs(self, X, y):
        if len(X) != len(y):
            raise InvalidInputError(f"{len(X)} mixtures but {len(y)} vocal stems")
        pairs = []
        for i, (m, v) in enumerate(zip(X, y)):
            pairs.append(TrackPair(f"track{i:04d}", _as_waveform(m, self.sample_rate),
                                   _as_waveform(v, self.sample_rate)))
        return pairs

    def fit(self, X, y):
        pairs = self._pairs(X, y)
        if not pairs:
            raise InvalidInputError("fit needs at least one track")
        cfg = replace(self._model_config(), c=pairs[0].mixture.channels)
        tcfg = TrainConfig(lr=self.lr, batch_size=self.batch_size, clip_frames=self.clip_frames,
                           max_steps=self.n_steps, validation_interval=0, seed=self.seed)
        trainer = Trainer(cfg, tcfg, pairs)
        trainer.fit(log_every=0)
        self.config_ = cfg
        self.model_ = trainer.model
        self.loss_curve_ = [loss for _, loss, _ in trainer.history]
        self.n_channels_ = cfg.c
        return self

    def _separator(self):
        check_is_fitted(self, "model_")
        return SpectrogramSeparator(self.model_, chunk_frames=self.chunk_frames)

    def predict(self, X):
        sep = self._separator()
        return [sep.separate(_as_waveform(m, self.sample_rate)).samples for m in X]

    def score(self, X, y):
        """Median SDR (dB) of the predicted vocals over the given tracks."""
        est = self.predict(X)
        scores = [sdr_track(e, _as_waveform(v, self.sample_rate).samples, self.sample_rate)
                  for e, v in zip(est, y)]
        scores = [s for s in scores if not np.isnan(s)]
        return float(np.median(scores)) if scores else float("nan")
