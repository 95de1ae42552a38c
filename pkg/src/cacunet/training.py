"""Training loop: spectrogram MSE, RMSprop, on-the-fly remixing, validation."""

from dataclasses import asdict, dataclass, fields
import csv
import logging
import math
from pathlib import Path
import time

import numpy as np
import torch
import torch.nn.functional as F

from ._validation import ConfigurationError, InvalidInputError, check_positive_int
from .checkpoint import load_checkpoint, save_checkpoint
from .data import TrackPair
from .spectral import SpectroTensor, Waveform, analyze, clip_samples, synthesize
from .unet import build_model, default_lr

__all__ = [
    "TrainConfig",
    "TrainingDivergedError",
    "spectrogram_mse",
    "augment_batch",
    "prepare_batch",
    "train_step",
    "SpectrogramSeparator",
    "validate",
    "Trainer",
]

LOG = logging.getLogger(__name__)

METRICS_COLUMNS = ("step", "loss", "val_mse", "elapsed_s")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings. ``lr=None`` picks the depth-based default."""

    lr: float | None = None
    rms_alpha: float = 0.99
    rms_eps: float = 1e-8
    batch_size: int = 8
    clip_frames: int = 128
    max_steps: int = 1000
    validation_interval: int = 100
    seed: int = 42

    def __post_init__(self):
        if self.lr is not None and not (0 <= self.lr < 1):
            raise ConfigurationError(f"lr must lie in [0, 1), got {self.lr}")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.clip_frames, "clip_frames")
        check_positive_int(self.max_steps, "max_steps", minimum=0)
        check_positive_int(self.validation_interval, "validation_interval", minimum=0)
        if not 0 < self.rms_alpha < 1:
            raise ConfigurationError(f"rms_alpha must lie in (0, 1), got {self.rms_alpha}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


class TrainingDivergedError(RuntimeError):
    pass


def spectrogram_mse(est, target):
    """Mean over every (channel, frame, bin) entry of the squared error."""
    if isinstance(est, SpectroTensor):
        est = est.data
    if isinstance(target, SpectroTensor):
        target = target.data
    if np.shape(est) != np.shape(target):
        raise InvalidInputError(
            f"estimate {np.shape(est)} and target {np.shape(target)} shapes differ")
    if torch.is_tensor(est):
        return F.mse_loss(est, target)
    diff = np.asarray(est, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff**2))


def _circular_crop(samples, start, length):
    idx = (start + np.arange(length)) % samples.shape[1]
    return samples[:, idx]


def augment_batch(track_pool, batch_size, clip_len, rng):
    """Remix random vocal and accompaniment excerpts from different tracks.

    Each example takes a vocal clip from one random track and offset and an
    accompaniment clip from an independently drawn track and offset; crops
    wrap around the end of short sources.  ``clip_len`` is in samples.
    """
    if not track_pool:
        raise InvalidInputError("augmentation needs at least one track")
    n = len(track_pool)
    batch = []
    for k in range(batch_size):
        tv, ta = track_pool[rng.integers(n)], track_pool[rng.integers(n)]
        voc_src, acc_src = tv.vocals.samples, ta.accompaniment_samples()
        if voc_src.shape[0] != acc_src.shape[0]:
            raise InvalidInputError("tracks in the pool disagree on channel count")
        voc = _circular_crop(voc_src, rng.integers(voc_src.shape[1]), clip_len)
        acc = _circular_crop(acc_src, rng.integers(acc_src.shape[1]), clip_len)
        sr = tv.sample_rate
        batch.append(TrackPair(f"aug{k}", Waveform(voc + acc, sr), Waveform(voc, sr),
                               "train", Waveform(acc, sr)))
    return batch


def prepare_batch(batch, cfg):
    """TrackPairs -> (input, target) float32 tensors in the model's mode."""
    xs, ys = [], []
    for pair in batch:
        xs.append(analyze(pair.mixture, cfg.stft, cfg.mode)[0].data)
        ys.append(analyze(pair.vocals, cfg.stft, cfg.mode)[0].data)
    return (torch.as_tensor(np.stack(xs), dtype=torch.float32),
            torch.as_tensor(np.stack(ys), dtype=torch.float32))


def _grad_norm(model):
    total = 0.0
    for p in model.parameters():
        if p.grad is not None:
            total += float(p.grad.detach().double().pow(2).sum())
    return math.sqrt(total)


def train_step(model, optimizer, x, y, step=0):
    """One RMSprop update on the spectrogram MSE; returns the loss."""
    model.train()
    optimizer.zero_grad(set_to_none=False)
    loss = spectrogram_mse(model(x), y)
    if not torch.isfinite(loss):
        lr = optimizer.param_groups[0]["lr"]
        raise TrainingDivergedError(
            f"non-finite loss at step {step} (lr={lr}, grad-norm={_grad_norm(model):.3g})")
    loss.backward()
    optimizer.step()
    return float(loss.detach())


class SpectrogramSeparator:
    """Mixture waveform -> estimated vocals using a trained model.

    With ``chunk_frames`` set, the spectrogram is processed in windows of
    that many frames; consecutive windows overlap by ``2 * trim`` frames and
    only each window's centre is kept, so every kept frame has ``trim``
    frames of context on both sides.  Otherwise the whole track goes through
    in one pass, zero-padded to a valid frame count.
    """

    def __init__(self, model, chunk_frames=None, trim=2, batch_size=4):
        self.model = model
        self.cfg = model.cfg
        self.trim = trim
        self.batch_size = batch_size
        div = self.cfg.time_divisor
        if chunk_frames is not None:
            if chunk_frames % div:
                raise ConfigurationError(
                    f"chunk_frames={chunk_frames} not divisible by {div}")
            if chunk_frames <= 2 * trim:
                raise ConfigurationError("chunk_frames must exceed twice the trim")
        self.chunk_frames = chunk_frames

    def _run(self, windows):
        outs = []
        with torch.no_grad():
            for i in range(0, len(windows), self.batch_size):
                x = torch.as_tensor(np.stack(windows[i:i + self.batch_size]), dtype=torch.float32)
                outs.extend(self.model(x).double().numpy())
        return outs

    def estimate(self, tensor):
        """Run the model over a (channels, frames, bins) array of any length."""
        data = tensor
        n_frames = data.shape[1]
        div = self.cfg.time_divisor
        self.model.eval()
        if self.chunk_frames is None:
            total = -(-n_frames // div) * div
            padded = np.pad(data, ((0, 0), (0, total - n_frames), (0, 0)))
            return self._run([padded])[0][:, :n_frames]
        step = self.chunk_frames - 2 * self.trim
        n_chunks = -(-n_frames // step)
        right = n_chunks * step + self.trim - n_frames
        padded = np.pad(data, ((0, 0), (self.trim, right), (0, 0)))
        windows = [padded[:, k * step:k * step + self.chunk_frames] for k in range(n_chunks)]
        outs = self._run(windows)
        kept = [o[:, self.trim:self.trim + step] for o in outs]
        return np.concatenate(kept, axis=1)[:, :n_frames]

    def separate(self, mixture):
        tensor, phase = analyze(mixture, self.cfg.stft, self.cfg.mode)
        est = self.estimate(tensor.data)
        if self.cfg.mode == "magnitude":
            est = np.maximum(est, 0.0)
        return synthesize(est, self.cfg.stft, len(mixture), self.cfg.mode, phase,
                          sample_rate=mixture.sample_rate)


def validate(separator, validation_tracks):
    """Time-domain MSE pooled over every sample of every validation track."""
    sq, count = 0.0, 0
    for track in validation_tracks:
        est = separator.separate(track.mixture)
        diff = est.samples - track.vocals.samples
        sq += float(np.sum(diff**2))
        count += diff.size
    return sq / count if count else float("nan")


class Trainer:
    """Owns a model, its RMSprop state and the batch RNG.

    ``fit`` writes ``metrics.csv``, ``last.ckpt`` and (with validation data)
    ``best.ckpt`` under ``out_dir`` when one is given.
    """

    def __init__(self, model_cfg, train_cfg=None, train_tracks=(), valid_tracks=(),
                 out_dir=None, model=None):
        self.cfg = model_cfg
        self.train_cfg = train_cfg or TrainConfig()
        tc = self.train_cfg
        if tc.clip_frames % model_cfg.time_divisor:
            raise ConfigurationError(
                f"clip_frames={tc.clip_frames} not divisible by the time sampling product "
                f"{model_cfg.time_divisor}")
        self.lr = tc.lr if tc.lr is not None else default_lr(model_cfg)
        self.model = model if model is not None else build_model(model_cfg, seed=tc.seed)
        self.optimizer = torch.optim.RMSprop(self.model.parameters(), lr=self.lr,
                                             alpha=tc.rms_alpha, eps=tc.rms_eps)
        self.rng = np.random.default_rng(tc.seed)
        self.train_tracks = list(train_tracks)
        self.valid_tracks = list(valid_tracks)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.step = 0
        self.best_val = None
        self.history = []

    @property
    def clip_len(self):
        return clip_samples(self.train_cfg.clip_frames, self.cfg.stft)

    def next_batch(self):
        batch = augment_batch(self.train_tracks, self.train_cfg.batch_size, self.clip_len,
                              self.rng)
        return prepare_batch(batch, self.cfg)

    def train_step(self, x, y):
        loss = train_step(self.model, self.optimizer, x, y, self.step)
        self.step += 1
        return loss

    def separator(self, chunk_frames=None):
        return SpectrogramSeparator(self.model, chunk_frames or self.train_cfg.clip_frames)

    def validate(self):
        return validate(self.separator(), self.valid_tracks)

    # -- checkpoints -------------------------------------------------------

    def save(self, path):
        return save_checkpoint(
            path, self.model, self.optimizer, step=self.step, best_val_mse=self.best_val,
            train_config=self.train_cfg.to_dict(), rng_state=self.rng.bit_generator.state)

    @classmethod
    def resume(cls, path, train_tracks=(), valid_tracks=(), out_dir=None, train_cfg=None):
        ckpt = load_checkpoint(path)
        tc = train_cfg or TrainConfig.from_dict(ckpt.train_config or {})
        trainer = cls(ckpt.config, tc, train_tracks, valid_tracks, out_dir, model=ckpt.model)
        ckpt.restore_optimizer(trainer.optimizer)
        trainer.step = ckpt.step
        trainer.best_val = ckpt.best_val_mse
        if ckpt.rng_state is not None:
            trainer.rng.bit_generator.state = ckpt.rng_state
        return trainer

    # -- loop --------------------------------------------------------------

    def fit(self, n_steps=None, log_every=50):
        n_steps = self.train_cfg.max_steps if n_steps is None else n_steps
        if not self.train_tracks:
            raise InvalidInputError("no training tracks")
        writer = fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            metrics = self.out_dir / "metrics.csv"
            fresh = not metrics.exists() or self.step == 0
            fh = open(metrics, "w" if fresh else "a", newline="")
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(METRICS_COLUMNS)
        start = time.perf_counter()
        interval = self.train_cfg.validation_interval
        try:
            for _ in range(n_steps):
                x, y = self.next_batch()
                loss = self.train_step(x, y)
                val = None
                if self.valid_tracks and interval and self.step % interval == 0:
                    val = self.validate()
                    if self.best_val is None or val < self.best_val:
                        self.best_val = val
                        if self.out_dir is not None:
                            self.save(self.out_dir / "best.ckpt")
                elapsed = time.perf_counter() - start
                self.history.append((self.step, loss, val))
                if writer is not None:
                    writer.writerow([self.step, repr(loss), "" if val is None else repr(val),
                                     f"{elapsed:.3f}"])
                if log_every and self.step % log_every == 0:
                    LOG.info("step %d loss %.6g%s", self.step, loss,
                             "" if val is None else f" val_mse {val:.6g}")
        finally:
            if fh is not None:
                fh.close()
            if self.out_dir is not None:
                self.save(self.out_dir / "last.ckpt")
        return self
