"""U-Net spectrogram estimator assembled from intermediate blocks.

Layout for ``n`` blocks (``n`` odd, ``k = (n - 1) // 2``)::

    x -> 1x2 conv + ReLU -> [block_i -> down_i] * k -> middle block
      -> [up_i -> concat(skip_i) -> block] * k -> 1x2 conv (-> ReLU in magnitude mode)

The "1x2" convolutions span two frequency bins and one frame; the input is
padded by one bin on the high-frequency side so the shape is preserved.
"""

from dataclasses import dataclass, field, replace
import json
import math

import torch
from torch import nn
import torch.nn.functional as F

from ._validation import ConfigurationError, InvalidInputError, check_positive_int
from .blocks import BlockSpec, build_block, count_module_params, parameter_count
from .spectral import SpectroTensor, StftParams

__all__ = [
    "SamplingSpec",
    "ModelConfig",
    "UNet",
    "Downsample",
    "Upsample",
    "build_model",
    "forward",
    "count_model_params",
    "param_breakdown",
    "preset",
    "PRESETS",
    "default_lr",
]

MODES = ("cac", "magnitude")


@dataclass(frozen=True)
class SamplingSpec:
    scale_t: int
    scale_f: int
    position: int = 0

    def __post_init__(self):
        if self.scale_t not in (1, 2) or self.scale_f not in (1, 2):
            raise ConfigurationError(
                f"sampling scales must be 1 or 2, got ({self.scale_t}, {self.scale_f})")
        if (self.scale_t, self.scale_f) == (1, 1):
            raise ConfigurationError("a sampling layer must rescale at least one axis")


@dataclass(frozen=True)
class ModelConfig:
    """Whole-network description.

    ``sampling`` is either empty (no down/up-sampling) or holds one entry per
    encoder block; the decoder mirrors it in reverse.
    """

    stft: StftParams = field(default_factory=StftParams)
    mode: str = "cac"
    c: int = 2
    c_internal: int = 24
    blocks: tuple = ()
    sampling: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "sampling", tuple(self.sampling))
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        check_positive_int(self.c, "c")
        check_positive_int(self.c_internal, "c_internal")
        n = len(self.blocks)
        if n == 0 or n % 2 == 0:
            raise ConfigurationError(f"number of blocks must be odd, got {n}")
        k = (n - 1) // 2
        if self.sampling and len(self.sampling) != k:
            raise ConfigurationError(
                f"{n} blocks need {k} sampling layers (or none), got {len(self.sampling)}")
        for i, s in enumerate(self.sampling):
            if s.position != i:
                raise ConfigurationError(f"sampling[{i}] has position {s.position}")
        f_bins = self.stft.n_bins
        if f_bins % self.freq_divisor:
            raise ConfigurationError(
                f"frequency bins F={f_bins} not divisible by the sampling product "
                f"{self.freq_divisor}")
        self._check_channels()
        for spec, n_bins in zip(self.blocks, self.block_bins()):
            spec.validate_at(n_bins)

    def _check_channels(self):
        k = self.n_encoder
        expected = self.c_internal
        for i, spec in enumerate(self.blocks[:k + 1]):
            if spec.c_in != expected:
                raise ConfigurationError(
                    f"block {i}: c_in={spec.c_in}, previous stage provides {expected}")
            expected = spec.c_out
        for j, spec in enumerate(self.blocks[k + 1:]):
            skip = self.blocks[k - 1 - j].c_out
            if spec.c_in != expected + skip:
                raise ConfigurationError(
                    f"block {k + 1 + j}: c_in={spec.c_in}, up-sampled {expected} + skip {skip}")
            expected = spec.c_out

    @property
    def n_encoder(self):
        return (len(self.blocks) - 1) // 2

    @property
    def io_channels(self):
        return 2 * self.c if self.mode == "cac" else self.c

    @property
    def freq_divisor(self):
        return math.prod(s.scale_f for s in self.sampling)

    @property
    def time_divisor(self):
        return math.prod(s.scale_t for s in self.sampling)

    def block_bins(self):
        """Frequency size seen by each block, encoder to decoder."""
        f = self.stft.n_bins
        enc = []
        for i in range(self.n_encoder):
            enc.append(f)
            if self.sampling:
                f //= self.sampling[i].scale_f
        return enc + [f] + enc[::-1]

    def with_stft(self, n_fft, hop=None, window=None):
        return replace(self, stft=StftParams(
            n_fft, hop if hop is not None else n_fft // 2, window or self.stft.window))

    def to_dict(self):
        return {
            "name": self.name,
            "mode": self.mode,
            "c": self.c,
            "c_internal": self.c_internal,
            "stft": self.stft.to_dict(),
            "blocks": [b.to_dict() for b in self.blocks],
            "sampling": [[s.scale_t, s.scale_f] for s in self.sampling],
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"name", "mode", "c", "c_internal", "stft", "blocks", "sampling"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown ModelConfig keys: {sorted(unknown)}")
        stft = StftParams(**d.pop("stft", {}))
        blocks = tuple(BlockSpec.from_dict(b) for b in d.pop("blocks", ()))
        sampling = tuple(SamplingSpec(st, sf, i) for i, (st, sf) in enumerate(d.pop("sampling", ())))
        return cls(stft=stft, blocks=blocks, sampling=sampling, **d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


class Downsample(nn.Module):
    """Strided convolution with kernel == stride == (scale_t, scale_f)."""

    def __init__(self, channels, s):
        super().__init__()
        self.scale = (s.scale_t, s.scale_f)
        self.conv = nn.Conv2d(channels, channels, kernel_size=self.scale, stride=self.scale)

    def forward(self, x):
        t, f = x.shape[-2:]
        if t % self.scale[0] or f % self.scale[1]:
            raise InvalidInputError(
                f"cannot down-sample ({t}, {f}) by {self.scale}: dimensions not divisible")
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels, s):
        super().__init__()
        self.scale = (s.scale_t, s.scale_f)
        self.conv = nn.ConvTranspose2d(channels, channels, kernel_size=self.scale,
                                       stride=self.scale)

    def forward(self, x):
        return self.conv(x)


class _EdgeConv(nn.Module):
    """1x2 convolution along frequency, right-padded by one bin."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel_size=(1, 2))

    def forward(self, x):
        return self.conv(F.pad(x, (0, 1)))


class UNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        k = cfg.n_encoder
        bins = cfg.block_bins()
        self.first = _EdgeConv(cfg.io_channels, cfg.c_internal)
        self.encoder = nn.ModuleList(build_block(s, f) for s, f in zip(cfg.blocks[:k], bins))
        self.middle = build_block(cfg.blocks[k], bins[k])
        self.decoder = nn.ModuleList(
            build_block(s, f) for s, f in zip(cfg.blocks[k + 1:], bins[k + 1:]))
        self.downs = nn.ModuleList(
            Downsample(cfg.blocks[i].c_out, s) for i, s in enumerate(cfg.sampling))
        # ups[j] feeds decoder block j, mirroring downs[k - 1 - j]
        self.ups = nn.ModuleList(
            Upsample((cfg.blocks[k + j].c_out), cfg.sampling[k - 1 - j])
            for j in range(len(cfg.sampling)))
        self.last = _EdgeConv(cfg.blocks[-1].c_out, cfg.io_channels)

    def check_input(self, x):
        cfg = self.cfg
        if x.dim() != 4:
            raise InvalidInputError(f"expected (batch, channels, frames, bins), got {tuple(x.shape)}")
        _, ch, t, f = x.shape
        if ch != cfg.io_channels:
            raise InvalidInputError(f"model expects {cfg.io_channels} channels, got {ch}")
        if f != cfg.stft.n_bins:
            raise InvalidInputError(f"model expects {cfg.stft.n_bins} bins, got {f}")
        if t % cfg.time_divisor:
            raise InvalidInputError(
                f"frame count T={t} not divisible by time sampling product {cfg.time_divisor}")

    def forward(self, x):
        self.check_input(x)
        x = torch.relu(self.first(x))
        skips = []
        for i, block in enumerate(self.encoder):
            x = block(x)
            skips.append(x)
            if self.downs:
                x = self.downs[i](x)
        x = self.middle(x)
        for j, block in enumerate(self.decoder):
            if self.ups:
                x = self.ups[j](x)
            x = block(torch.cat([x, skips[-1 - j]], dim=1))
        x = self.last(x)
        if self.cfg.mode == "magnitude":
            x = torch.relu(x)
        return x


def build_model(cfg, seed=42):
    """Construct a :class:`UNet` with weights drawn from a seeded generator."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = UNet(cfg)
    return model


def forward(model, x):
    """Apply ``model`` to a single :class:`SpectroTensor` (inference mode)."""
    data = x.data if isinstance(x, SpectroTensor) else x
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(torch.as_tensor(data, dtype=torch.float32)[None])[0].double().numpy()
    finally:
        model.train(was_training)
    kind = "cac" if model.cfg.mode == "cac" else "magnitude"
    return SpectroTensor(out, kind=kind)


def _sampling_params(channels, s):
    return channels * channels * s.scale_t * s.scale_f + channels


def param_breakdown(cfg):
    """Closed-form trainable-parameter count per named sub-module."""
    k = cfg.n_encoder
    bins = cfg.block_bins()
    out = {"first": cfg.io_channels * cfg.c_internal * 2 + cfg.c_internal}
    for i in range(k):
        out[f"encoder.{i}"] = parameter_count(cfg.blocks[i], bins[i])
        if cfg.sampling:
            out[f"downs.{i}"] = _sampling_params(cfg.blocks[i].c_out, cfg.sampling[i])
    out["middle"] = parameter_count(cfg.blocks[k], bins[k])
    for j in range(k):
        if cfg.sampling:
            out[f"ups.{j}"] = _sampling_params(cfg.blocks[k + j].c_out, cfg.sampling[k - 1 - j])
        out[f"decoder.{j}"] = parameter_count(cfg.blocks[k + 1 + j], bins[k + 1 + j])
    out["last"] = cfg.blocks[-1].c_out * cfg.io_channels * 2 + cfg.io_channels
    return out


def count_model_params(cfg):
    return sum(param_breakdown(cfg).values())


def enumerate_params(model):
    """Per-sub-module counts taken from the instantiated model."""
    return {name: count_module_params(m) for name, m in _named_units(model)}


def _named_units(model):
    yield "first", model.first
    for i, b in enumerate(model.encoder):
        yield f"encoder.{i}", b
        if model.downs:
            yield f"downs.{i}", model.downs[i]
    yield "middle", model.middle
    for j, b in enumerate(model.decoder):
        if model.ups:
            yield f"ups.{j}", model.ups[j]
        yield f"decoder.{j}", b
    yield "last", model.last


# -- presets ---------------------------------------------------------------

def _tdc(c_in, c_out):
    return BlockSpec("TDC", c_in, c_out, growth_rate=24, num_layers=5, kernel_f=3)


def _tfc(c_in, c_out):
    return BlockSpec("TFC", c_in, c_out, growth_rate=24, num_layers=5, kernel_f=3, kernel_t=3)


def _tdf_single(c_in, c_out):
    return BlockSpec("TDF", c_in, c_out, tdf_layers=1)


def _tdf_two(c_in, c_out):
    return BlockSpec("TDF", c_in, c_out, tdf_layers=2, bf=4)


def _tfc_tdf(c_in, c_out):
    return BlockSpec("TFC_TDF", c_in, c_out, growth_rate=24, num_layers=5, kernel_f=3,
                     kernel_t=3, tdf_layers=2, bf=16, min_hidden=16)


def _tdc_rnn(c_in, c_out):
    return BlockSpec("TDC_RNN", c_in, c_out, growth_rate=24, num_layers=5, kernel_f=3,
                     bf=16, min_hidden=16)


def _freq_only(k):
    return [(1, 2)] * k


def _mixed(k):
    # time is halved at most three times; those halvings sit outermost
    n_tf = min(3, k)
    return [(2, 2)] * n_tf + [(1, 2)] * (k - n_tf)


def _assemble(name, make_block, n_blocks, schedule, n_fft=2048, hop=1024, mode="cac",
              c=2, width=24):
    k = (n_blocks - 1) // 2
    blocks = [make_block(width, width) for _ in range(k + 1)]
    blocks += [make_block(2 * width, width) for _ in range(k)]
    sampling = [SamplingSpec(st, sf, i) for i, (st, sf) in enumerate(schedule)]
    return ModelConfig(stft=StftParams(n_fft, hop), mode=mode, c=c, c_internal=width,
                       blocks=blocks, sampling=sampling, name=name)


_BASE = {
    "tdc17": (_tdc, 17, _freq_only(8), {}),
    "tdc17_nosampling": (_tdc, 17, [], {}),
    "tdc3": (_tdc, 3, [], {}),
    "tdf17_single": (_tdf_single, 17, _freq_only(8), {}),
    "tdf17_two": (_tdf_two, 17, _freq_only(8), {}),
    "tdf3": (_tdf_two, 3, _freq_only(1), {}),
    "tfc17": (_tfc, 17, _mixed(8), {}),
    "tfc17_timepreserve": (_tfc, 17, _freq_only(8), {}),
    "tdcrnn17": (_tdc_rnn, 17, _mixed(8), {}),
    "tfctdf7": (_tfc_tdf, 7, _mixed(3), {}),
    "tfctdf17": (_tfc_tdf, 17, _mixed(8), {}),
    "tfctdf9_large": (_tfc_tdf, 9, _mixed(4), {"n_fft": 4096, "hop": 2048}),
}

PRESETS = tuple(list(_BASE) + [f"{name}_mag" for name in _BASE])


def preset(name):
    """Named model configuration; ``<name>_mag`` for magnitude mode."""
    base, mode = name, "cac"
    if name.endswith("_mag"):
        base, mode = name[:-4], "magnitude"
    if base not in _BASE:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    make_block, n_blocks, schedule, stft_kw = _BASE[base]
    return _assemble(name, make_block, n_blocks, schedule, mode=mode, **stft_kw)


def default_lr(cfg):
    """Deeper networks get the lower end of the learning-rate range."""
    return 0.0005 if len(cfg.blocks) >= 17 else 0.001
