"""Waveforms, STFT/iSTFT and the complex-as-channels tensor layout.

A complex spectrogram of a ``c``-channel signal has shape
``(c, frames, n_fft // 2 + 1)``.  Packing it as a real tensor drops the
Nyquist bin and stacks real parts on top of imaginary parts, giving
``(2c, frames, n_fft // 2)``::

    channels 0 .. c-1   -> real parts
    channels c .. 2c-1  -> imaginary parts

Magnitude mode keeps ``c`` channels of ``|X|`` and carries the phase
separately so a magnitude estimate can be turned back into audio.
"""

from dataclasses import dataclass, field
import wave

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
import scipy.io.wavfile
import scipy.signal

from ._validation import (
    ConfigurationError,
    InvalidInputError,
    check_positive_int,
    check_power_of_two,
    check_signal,
)

__all__ = [
    "Waveform",
    "StftParams",
    "SpectroTensor",
    "stft",
    "istft",
    "cac_pack",
    "cac_unpack",
    "mag_split",
    "mag_reconstruct",
    "clip_samples",
    "analyze",
    "synthesize",
    "read_wav",
    "write_wav",
]

KINDS = ("cac", "magnitude", "generic-feature")


@dataclass(frozen=True, eq=False)
class Waveform:
    """Multichannel audio: ``samples`` is (channels, time), float64."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = check_signal(self.samples)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if not self.sample_rate or self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be > 0, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self):
        return self.samples.shape[0]

    def __len__(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftParams:
    n_fft: int = 2048
    hop: int = 1024
    window: str = "hann"

    def __post_init__(self):
        check_power_of_two(self.n_fft, "n_fft")
        check_positive_int(self.hop, "hop")
        if self.hop > self.n_fft:
            raise ConfigurationError(f"hop ({self.hop}) must not exceed n_fft ({self.n_fft})")
        win = self.window_array()
        # weighted overlap-add divides by the summed squared window, so the
        # only requirement for perfect reconstruction is that it never vanishes
        if not scipy.signal.check_NOLA(win, self.n_fft, self.n_fft - self.hop):
            raise ConfigurationError(
                f"window {self.window!r} with n_fft={self.n_fft}, hop={self.hop} "
                "does not allow perfect reconstruction")

    @property
    def n_bins(self):
        """Frequency bins kept in packed tensors (Nyquist dropped)."""
        return self.n_fft // 2

    def window_array(self):
        try:
            return scipy.signal.get_window(self.window, self.n_fft, fftbins=True)
        except ValueError as exc:
            raise ConfigurationError(f"unknown window {self.window!r}") from exc

    def n_frames(self, n_samples):
        return 1 + n_samples // self.hop

    def to_dict(self):
        return {"n_fft": self.n_fft, "hop": self.hop, "window": self.window}


def clip_samples(frames, params):
    """Number of samples whose centred STFT has exactly ``frames`` frames."""
    return (frames - 1) * params.hop


@dataclass(frozen=True, eq=False)
class SpectroTensor:
    data: np.ndarray
    kind: str = "generic-feature"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidInputError(
                f"SpectroTensor data must be (channels, frames, bins), got {data.shape}")
        if np.iscomplexobj(data):
            raise InvalidInputError("SpectroTensor holds real values only")
        if self.kind not in KINDS:
            raise InvalidInputError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "cac" and data.shape[0] % 2:
            raise InvalidInputError(
                f"cac tensors need an even channel count, got {data.shape[0]}")
        if self.kind == "magnitude" and np.any(data < 0):
            raise InvalidInputError("magnitude tensors must be non-negative")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


def stft(w, p):
    """Centred STFT of every channel of ``w``.

    Returns a complex array of shape (channels, frames, n_fft // 2 + 1) with
    ``frames = 1 + len(w) // hop``.
    """
    x = w.samples if isinstance(w, Waveform) else check_signal(w)
    if x.shape[1] < p.n_fft:
        raise InvalidInputError(
            f"waveform has {x.shape[1]} samples, shorter than one window ({p.n_fft})")
    pad = p.n_fft // 2
    x = np.pad(x, ((0, 0), (pad, pad)), mode="reflect")
    frames = sliding_window_view(x, p.n_fft, axis=-1)[:, :: p.hop]
    return np.fft.rfft(frames * p.window_array(), axis=-1)


def istft(spec, p, length, sample_rate=None):
    """Weighted overlap-add inverse of :func:`stft`.

    Returns a :class:`Waveform` when ``sample_rate`` is given, otherwise the
    raw (channels, length) array.
    """
    spec = np.asarray(spec)
    if spec.ndim == 2:
        spec = spec[np.newaxis]
    if spec.ndim != 3 or spec.shape[-1] != p.n_fft // 2 + 1:
        raise InvalidInputError(
            f"expected (channels, frames, {p.n_fft // 2 + 1}) spectrogram, got {spec.shape}")
    n_ch, n_frames, _ = spec.shape
    if n_frames < 1:
        raise InvalidInputError("spectrogram has no frames")
    natural = (n_frames - 1) * p.hop
    if abs(length - natural) > p.hop:
        raise InvalidInputError(
            f"length {length} inconsistent with {n_frames} frames at hop {p.hop}")

    win = p.window_array()
    frames = np.fft.irfft(spec, n=p.n_fft, axis=-1) * win
    total = p.n_fft + p.hop * (n_frames - 1)
    out = np.zeros((n_ch, total))
    norm = np.zeros(total)
    win_sq = win**2
    for t in range(n_frames):
        start = t * p.hop
        out[:, start:start + p.n_fft] += frames[:, t]
        norm[start:start + p.n_fft] += win_sq
    pad = p.n_fft // 2
    nonzero = norm > 1e-10
    out[:, nonzero] /= norm[nonzero]
    out = out[:, pad:pad + length]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    if sample_rate is not None:
        return Waveform(out, sample_rate)
    return out


def cac_pack(spec):
    """Complex (c, T, F+1) spectrogram -> real (2c, T, F) cac tensor."""
    spec = np.asarray(spec)
    if spec.ndim != 3 or not np.iscomplexobj(spec):
        raise InvalidInputError(
            f"cac_pack expects a complex (channels, frames, bins) array, got "
            f"{spec.dtype} {spec.shape}")
    kept = spec[..., :-1]
    return SpectroTensor(np.concatenate([kept.real, kept.imag], axis=0), kind="cac")


def cac_unpack(t, p=None):
    """Inverse of :func:`cac_pack`; the Nyquist bin comes back as zero."""
    data = t.data if isinstance(t, SpectroTensor) else np.asarray(t)
    if data.ndim != 3:
        raise InvalidInputError(f"expected (2c, frames, bins), got {data.shape}")
    if data.shape[0] % 2:
        raise InvalidInputError(f"cac tensor needs even channel count, got {data.shape[0]}")
    if p is not None and data.shape[-1] != p.n_bins:
        raise InvalidInputError(
            f"tensor has {data.shape[-1]} bins, StftParams expect {p.n_bins}")
    c = data.shape[0] // 2
    spec = data[:c] + 1j * data[c:]
    return np.concatenate([spec, np.zeros(spec.shape[:-1] + (1,), spec.dtype)], axis=-1)


def mag_split(spec):
    """Split into (magnitude tensor, unit-modulus phase).

    Operates on whatever bins it is given; zero bins get phase 1+0j.
    """
    spec = np.asarray(spec)
    mag = np.abs(spec)
    phase = np.ones_like(spec, dtype=np.complex128)
    nz = mag > 0
    phase[nz] = spec[nz] / mag[nz]
    return SpectroTensor(mag, kind="magnitude"), phase


def mag_reconstruct(est_mag, mixture_phase):
    mag = est_mag.data if isinstance(est_mag, SpectroTensor) else np.asarray(est_mag)
    mixture_phase = np.asarray(mixture_phase)
    if mag.shape != mixture_phase.shape:
        raise InvalidInputError(
            f"magnitude {mag.shape} and phase {mixture_phase.shape} shapes differ")
    if np.any(mag < 0):
        raise InvalidInputError("estimated magnitude has negative entries")
    return mag * mixture_phase


def analyze(w, p, mode="cac"):
    """Waveform -> (network input tensor, mixture phase or None)."""
    spec = stft(w, p)
    if mode == "cac":
        return cac_pack(spec), None
    if mode == "magnitude":
        return mag_split(spec[..., :-1])
    raise InvalidInputError(f"mode must be 'cac' or 'magnitude', got {mode!r}")


def synthesize(t, p, length, mode="cac", phase=None, sample_rate=None):
    """Network output tensor -> waveform, inverting :func:`analyze`."""
    if mode == "cac":
        spec = cac_unpack(t, p)
    elif mode == "magnitude":
        if phase is None:
            raise InvalidInputError("magnitude synthesis needs the mixture phase")
        spec = mag_reconstruct(t, phase)
        spec = np.concatenate([spec, np.zeros(spec.shape[:-1] + (1,), spec.dtype)], axis=-1)
    else:
        raise InvalidInputError(f"mode must be 'cac' or 'magnitude', got {mode!r}")
    return istft(spec, p, length, sample_rate=sample_rate)


# -- WAV I/O ---------------------------------------------------------------

_SUBTYPES = ("PCM_16", "PCM_24", "FLOAT")


def read_wav(path, return_subtype=False):
    """Read a PCM16/PCM24/float32 WAV as a float64 :class:`Waveform`.

    Integer data is scaled by 2**15 (16-bit) or 2**23 (24-bit) so writing it
    back at the same depth is bit-exact.
    """
    try:
        sr, data = scipy.io.wavfile.read(path)
    except (ValueError, EOFError, OSError) as exc:
        raise InvalidInputError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        subtype, samples = "PCM_16", data / 2.0**15
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples in int32
        subtype = _probe_bits(path)
        scale = 2.0**31
        samples = data / scale
    elif data.dtype == np.float32:
        subtype, samples = "FLOAT", data.astype(np.float64)
    else:
        raise InvalidInputError(f"unsupported WAV sample type {data.dtype} in {path}")
    samples = samples.T if samples.ndim == 2 else samples[np.newaxis]
    w = Waveform(np.ascontiguousarray(samples), sr)
    return (w, subtype) if return_subtype else w


def _probe_bits(path):
    with wave.open(str(path), "rb") as f:
        width = f.getsampwidth()
    if width != 3:
        raise InvalidInputError(f"unsupported {8 * width}-bit integer WAV {path}")
    return "PCM_24"


def write_wav(path, w, subtype="PCM_16"):
    if subtype not in _SUBTYPES:
        raise InvalidInputError(f"subtype must be one of {_SUBTYPES}, got {subtype!r}")
    x = w.samples.T
    if subtype == "FLOAT":
        scipy.io.wavfile.write(path, w.sample_rate, x.astype(np.float32))
        return
    bits = 16 if subtype == "PCM_16" else 24
    scale = 2.0 ** (bits - 1)
    ints = np.clip(np.round(x * scale), -scale, scale - 1).astype(np.int64)
    if bits == 16:
        scipy.io.wavfile.write(path, w.sample_rate, ints.astype(np.int16))
        return
    raw = np.ascontiguousarray(ints, dtype="<i4").view(np.uint8).reshape(-1, 4)[:, :3]
    with wave.open(str(path), "wb") as f:
        f.setnchannels(w.channels)
        f.setsampwidth(3)
        f.setframerate(w.sample_rate)
        f.writeframes(raw.tobytes())
