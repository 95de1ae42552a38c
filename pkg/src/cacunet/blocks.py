"""Intermediate blocks: spectrogram-like tensor in, equally sized tensor out.

Every block consumes ``(batch, c_in, frames, bins)`` and returns
``(batch, c_out, frames, bins)``.  Five families are available:

``TDF``
    Fully-connected layers over the frequency axis, shared by every channel
    and frame.
``TDC``
    Dense block of 1-D convolutions along frequency (frame independent).
``TFC``
    Dense block of 2-D convolutions over frames and bins.
``TFC_TDF``
    TFC followed by TDF, with a residual around the TDF.
``TDC_RNN``
    TDC followed by a bidirectional GRU along frames, with a residual.
"""

from dataclasses import asdict, dataclass, fields

import torch
from torch import nn

from ._validation import ConfigurationError, InvalidInputError, check_positive_int

__all__ = [
    "FAMILIES",
    "BlockSpec",
    "CompositeLayer",
    "DenseBlock",
    "TDF",
    "TDFBlock",
    "TFCTDFBlock",
    "TDCRNNBlock",
    "build_block",
    "parameter_count",
    "count_module_params",
]

FAMILIES = ("TDF", "TDC", "TFC", "TFC_TDF", "TDC_RNN")

_REQUIRED = {
    "TDF": ("tdf_layers",),
    "TDC": ("growth_rate", "num_layers", "kernel_f"),
    "TFC": ("growth_rate", "num_layers", "kernel_f", "kernel_t"),
    "TFC_TDF": ("growth_rate", "num_layers", "kernel_f", "kernel_t", "tdf_layers"),
    "TDC_RNN": ("growth_rate", "num_layers", "kernel_f"),
}

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class BlockSpec:
    """Declarative description of one intermediate block.

    ``bf`` divides the frequency size to get the TDF bottleneck width (and the
    GRU width for ``TDC_RNN`` unless ``rnn_hidden`` pins it).  ``min_hidden``
    floors those widths so coarse scales of deep models stay usable; with the
    default 0 a zero-width layer is a configuration error.
    """

    family: str
    c_in: int
    c_out: int
    growth_rate: int | None = None
    num_layers: int | None = None
    kernel_f: int | None = None
    kernel_t: int | None = None
    bf: int | None = None
    tdf_layers: int | None = None
    rnn_hidden: int | None = None
    min_hidden: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        check_positive_int(self.c_in, "c_in")
        check_positive_int(self.c_out, "c_out")
        for name in _REQUIRED[self.family]:
            if getattr(self, name) is None:
                raise ConfigurationError(f"{self.family} block requires {name}")
        for name in ("growth_rate", "num_layers", "kernel_f", "kernel_t", "bf", "rnn_hidden"):
            if getattr(self, name) is not None:
                check_positive_int(getattr(self, name), name)
        for name in ("kernel_f", "kernel_t"):
            k = getattr(self, name)
            if k is not None and k % 2 == 0:
                raise ConfigurationError(f"{name} must be odd for same padding, got {k}")
        if self.tdf_layers is not None and self.tdf_layers not in (1, 2):
            raise ConfigurationError(f"tdf_layers must be 1 or 2, got {self.tdf_layers}")
        if self.tdf_layers == 2 and self.bf is None:
            raise ConfigurationError("two-layer TDF requires a bottleneck factor bf")
        if self.family == "TDC_RNN" and self.rnn_hidden is None and self.bf is None:
            raise ConfigurationError("TDC_RNN requires rnn_hidden or bf")
        check_positive_int(self.min_hidden, "min_hidden", minimum=0)

    @property
    def has_tdf(self):
        return self.family in ("TDF", "TFC_TDF")

    def tdf_hidden(self, n_bins):
        """Bottleneck width of a two-layer TDF at ``n_bins``; None if single."""
        if self.tdf_layers != 2:
            return None
        hidden = max(n_bins // self.bf, self.min_hidden)
        if hidden < 1:
            raise ConfigurationError(
                f"TDF bottleneck floor({n_bins}/{self.bf}) is zero")
        return hidden

    def rnn_units(self, n_bins):
        if self.rnn_hidden is not None:
            return self.rnn_hidden
        hidden = max(n_bins // self.bf, self.min_hidden)
        if hidden < 1:
            raise ConfigurationError(f"GRU width floor({n_bins}/{self.bf}) is zero")
        return hidden

    def validate_at(self, n_bins):
        """Raise if the block cannot run on ``n_bins`` frequency bins."""
        check_positive_int(n_bins, "n_bins")
        if self.kernel_f is not None and n_bins < self.kernel_f:
            raise ConfigurationError(
                f"{self.family} block: {n_bins} bins is smaller than kernel_f={self.kernel_f}")
        if self.has_tdf:
            self.tdf_hidden(n_bins)
        if self.family == "TDC_RNN":
            self.rnn_units(n_bins)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown BlockSpec keys: {sorted(unknown)}")
        return cls(**d)


def _bn(channels):
    return nn.BatchNorm2d(channels, eps=BN_EPS, momentum=BN_MOMENTUM)


class CompositeLayer(nn.Sequential):
    """Convolution -> batch norm -> ReLU with same padding.

    ``kernel`` is (frames, bins); a kernel of (1, k) is a 1-D convolution
    along frequency applied to each frame independently.
    """

    def __init__(self, c_in, c_out, kernel):
        kt, kf = kernel
        super().__init__(
            nn.Conv2d(c_in, c_out, kernel_size=(kt, kf), padding=(kt // 2, kf // 2)),
            _bn(c_out),
            nn.ReLU(),
        )


class DenseBlock(nn.Module):
    """Densely connected composite layers.

    Layer ``i`` sees the block input concatenated with the outputs of layers
    ``0..i-1``.  The last layer emits ``c_out`` channels instead of
    ``growth_rate`` and its output alone is the block output.
    """

    def __init__(self, c_in, c_out, growth_rate, num_layers, kernel):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        layers = []
        for i in range(num_layers):
            width = c_out if i == num_layers - 1 else growth_rate
            layers.append(CompositeLayer(c_in + i * growth_rate, width, kernel))
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        feats = [x]
        for layer in self.layers[:-1]:
            feats.append(layer(torch.cat(feats, dim=1)))
        return self.layers[-1](torch.cat(feats, dim=1))


class _FCLayer(nn.Module):
    def __init__(self, channels, n_in, n_out):
        super().__init__()
        self.fc = nn.Linear(n_in, n_out)
        self.bn = _bn(channels)

    def forward(self, x):
        return torch.relu(self.bn(self.fc(x)))


class TDF(nn.Module):
    """Frequency-axis fully-connected network shared over channels and frames."""

    def __init__(self, channels, n_bins, hidden=None):
        super().__init__()
        self.n_bins = n_bins
        if hidden is None:
            self.layers = nn.Sequential(_FCLayer(channels, n_bins, n_bins))
        else:
            self.layers = nn.Sequential(
                _FCLayer(channels, n_bins, hidden),
                _FCLayer(channels, hidden, n_bins),
            )

    def forward(self, x):
        if x.shape[-1] != self.n_bins:
            raise InvalidInputError(
                f"TDF built for {self.n_bins} bins, got input with {x.shape[-1]}")
        return self.layers(x)

    def zero_output_(self):
        last = self.layers[-1].fc
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)


class TDFBlock(nn.Module):
    """Stand-alone TDF block; a 1x1 composite layer adapts the channel count."""

    def __init__(self, spec, n_bins):
        super().__init__()
        self.adapt = (CompositeLayer(spec.c_in, spec.c_out, (1, 1))
                      if spec.c_in != spec.c_out else nn.Identity())
        self.tdf = TDF(spec.c_out, n_bins, spec.tdf_hidden(n_bins))

    def forward(self, x):
        return self.tdf(self.adapt(x))


class TFCTDFBlock(nn.Module):
    """out = TDF(TFC(x)) + TFC(x)."""

    def __init__(self, spec, n_bins):
        super().__init__()
        self.tfc = DenseBlock(spec.c_in, spec.c_out, spec.growth_rate, spec.num_layers,
                              (spec.kernel_t, spec.kernel_f))
        self.tdf = TDF(spec.c_out, n_bins, spec.tdf_hidden(n_bins))

    def forward(self, x):
        h = self.tfc(x)
        return h + self.tdf(h)

    def zero_residual_(self):
        self.tdf.zero_output_()


class TDCRNNBlock(nn.Module):
    """out = R(TDC(x)) + TDC(x), R a bidirectional GRU along frames.

    The GRU runs on each channel's sequence of frequency vectors (shared
    weights across channels) and is projected back to ``n_bins``.
    """

    def __init__(self, spec, n_bins):
        super().__init__()
        hidden = spec.rnn_units(n_bins)
        self.n_bins = n_bins
        self.tdc = DenseBlock(spec.c_in, spec.c_out, spec.growth_rate, spec.num_layers,
                              (1, spec.kernel_f))
        self.gru = nn.GRU(n_bins, hidden, num_layers=1, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(2 * hidden, n_bins)
        self.bn = _bn(spec.c_out)

    def forward(self, x):
        h = self.tdc(x)
        n, c, t, f = h.shape
        z, _ = self.gru(h.reshape(n * c, t, f))
        z = self.proj(z).reshape(n, c, t, f)
        return h + torch.relu(self.bn(z))

    def zero_residual_(self):
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)


def build_block(spec, n_bins):
    """Instantiate the module described by ``spec`` for inputs with ``n_bins``."""
    spec.validate_at(n_bins)
    if spec.family == "TDF":
        return TDFBlock(spec, n_bins)
    if spec.family == "TDC":
        return DenseBlock(spec.c_in, spec.c_out, spec.growth_rate, spec.num_layers,
                          (1, spec.kernel_f))
    if spec.family == "TFC":
        return DenseBlock(spec.c_in, spec.c_out, spec.growth_rate, spec.num_layers,
                          (spec.kernel_t, spec.kernel_f))
    if spec.family == "TFC_TDF":
        return TFCTDFBlock(spec, n_bins)
    return TDCRNNBlock(spec, n_bins)


# -- closed-form parameter counts --------------------------------------------
# Trainable scalars only: BN contributes scale and shift, not running stats.

def _composite(c_in, c_out, kt, kf):
    return c_in * c_out * kt * kf + c_out + 2 * c_out


def _dense(c_in, c_out, g, n_layers, kt, kf):
    total = sum(_composite(c_in + i * g, g, kt, kf) for i in range(n_layers - 1))
    return total + _composite(c_in + (n_layers - 1) * g, c_out, kt, kf)


def _tdf(channels, n_bins, hidden):
    if hidden is None:
        return n_bins * n_bins + n_bins + 2 * channels
    return (n_bins * hidden + hidden + 2 * channels) + (hidden * n_bins + n_bins + 2 * channels)


def _bigru(n_in, hidden):
    per_direction = 3 * (n_in * hidden + hidden * hidden + 2 * hidden)
    return 2 * per_direction


def parameter_count(spec, n_bins):
    """Exact trainable-parameter count of ``build_block(spec, n_bins)``."""
    spec.validate_at(n_bins)
    s = spec
    if s.family == "TDF":
        adapt = _composite(s.c_in, s.c_out, 1, 1) if s.c_in != s.c_out else 0
        return adapt + _tdf(s.c_out, n_bins, s.tdf_hidden(n_bins))
    if s.family == "TDC":
        return _dense(s.c_in, s.c_out, s.growth_rate, s.num_layers, 1, s.kernel_f)
    if s.family == "TFC":
        return _dense(s.c_in, s.c_out, s.growth_rate, s.num_layers, s.kernel_t, s.kernel_f)
    if s.family == "TFC_TDF":
        return (_dense(s.c_in, s.c_out, s.growth_rate, s.num_layers, s.kernel_t, s.kernel_f)
                + _tdf(s.c_out, n_bins, s.tdf_hidden(n_bins)))
    hidden = s.rnn_units(n_bins)
    return (_dense(s.c_in, s.c_out, s.growth_rate, s.num_layers, 1, s.kernel_f)
            + _bigru(n_bins, hidden) + 2 * hidden * n_bins + n_bins + 2 * s.c_out)


def count_module_params(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
