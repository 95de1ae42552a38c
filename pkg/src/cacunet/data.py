"""Track datasets: MUSDB-style WAV folders and a seeded synthetic generator.

On-disk layout::

    <root>/manifest.json                 (optional)
    <root>/<split>/<track>/mixture.wav
    <root>/<split>/<track>/vocals.wav
    <root>/<split>/<track>/accompaniment.wav   (optional; or drums/bass/other)

When ``manifest.json`` is present it is authoritative: each entry names the
track id, its split and (optionally) the folder it lives in, which is how
validation tracks stored under ``train/`` are carved out of the train split.
"""

from dataclasses import asdict, dataclass
import json
import logging
from pathlib import Path
import warnings

import numpy as np
import scipy.signal

from ._validation import ConfigurationError, InvalidInputError, check_positive_int
from .spectral import Waveform, read_wav, write_wav

__all__ = [
    "TrackPair",
    "SynthSpec",
    "DatasetError",
    "load_dataset",
    "synth_dataset",
    "synth_splits",
    "write_dataset",
    "read_manifest",
]

LOG = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
MANIFEST = "manifest.json"
_OTHER_STEMS = ("drums", "bass", "other")


class DatasetError(InvalidInputError):
    """Raised by strict loads; ``problems`` maps track id to reason."""

    def __init__(self, problems):
        self.problems = dict(problems)
        listing = "; ".join(f"{k}: {v}" for k, v in sorted(self.problems.items()))
        super().__init__(f"{len(self.problems)} track(s) rejected: {listing}")


@dataclass(frozen=True, eq=False)
class TrackPair:
    id: str
    mixture: Waveform
    vocals: Waveform
    split: str = "train"
    accompaniment: Waveform | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise InvalidInputError(f"split must be one of {SPLITS}, got {self.split!r}")
        stems = [("vocals", self.vocals)]
        if self.accompaniment is not None:
            stems.append(("accompaniment", self.accompaniment))
        for name, w in stems:
            _check_compatible(self.mixture, w, name)

    @property
    def sample_rate(self):
        return self.mixture.sample_rate

    def accompaniment_samples(self):
        if self.accompaniment is not None:
            return self.accompaniment.samples
        return self.mixture.samples - self.vocals.samples


def _check_compatible(ref, w, name):
    if w.sample_rate != ref.sample_rate:
        raise InvalidInputError(
            f"{name} sample rate {w.sample_rate} differs from mixture {ref.sample_rate}")
    if w.channels != ref.channels:
        raise InvalidInputError(
            f"{name} has {w.channels} channels, mixture has {ref.channels}")
    if len(w) != len(ref):
        raise InvalidInputError(
            f"{name} length {len(w)} differs from mixture length {len(ref)}")


# -- loading ---------------------------------------------------------------

def read_manifest(root):
    path = Path(root) / MANIFEST
    if not path.exists():
        return None
    with open(path) as f:
        return json.load(f)


def _load_track(folder, track_id, split):
    mix_path, voc_path = folder / "mixture.wav", folder / "vocals.wav"
    for p in (mix_path, voc_path):
        if not p.exists():
            raise InvalidInputError(f"missing {p.name}")
    mixture, vocals = read_wav(mix_path), read_wav(voc_path)
    accompaniment = None
    if (folder / "accompaniment.wav").exists():
        accompaniment = read_wav(folder / "accompaniment.wav")
    else:
        others = [folder / f"{s}.wav" for s in _OTHER_STEMS if (folder / f"{s}.wav").exists()]
        if others:
            stems = [read_wav(p) for p in others]
            for p, w in zip(others, stems):
                _check_compatible(mixture, w, p.stem)
            accompaniment = Waveform(sum(w.samples for w in stems), mixture.sample_rate)
    return TrackPair(track_id, mixture, vocals, split, accompaniment)


def load_dataset(root, split, strict=False):
    """Load every valid track of ``split`` under ``root``, sorted by id.

    Bad tracks are skipped with a warning naming the reason; with
    ``strict=True`` a :class:`DatasetError` listing all of them is raised
    instead.
    """
    if split not in SPLITS:
        raise InvalidInputError(f"split must be one of {SPLITS}, got {split!r}")
    root = Path(root)
    manifest = read_manifest(root)
    if manifest is not None:
        entries = [(e["id"], root / e.get("folder", e["split"]) / e["id"])
                   for e in manifest.get("tracks", []) if e["split"] == split]
    else:
        split_dir = root / split
        folders = sorted(p for p in split_dir.iterdir() if p.is_dir()) if split_dir.is_dir() else []
        entries = [(p.name, p) for p in folders]

    tracks, problems = [], {}
    for track_id, folder in sorted(entries):
        try:
            tracks.append(_load_track(folder, track_id, split))
        except InvalidInputError as exc:
            problems[track_id] = str(exc)
    if problems:
        if strict:
            raise DatasetError(problems)
        for track_id, reason in sorted(problems.items()):
            warnings.warn(f"track {track_id!r} rejected: {reason}", stacklevel=2)
    if not tracks:
        warnings.warn(f"no usable tracks for split {split!r} under {root}", stacklevel=2)
    return tracks


def write_dataset(tracks, root, subtype="PCM_16", seed=None):
    """Write tracks in the documented layout plus ``manifest.json``."""
    root = Path(root)
    entries = []
    for t in tracks:
        folder = root / t.split / t.id
        folder.mkdir(parents=True, exist_ok=True)
        write_wav(folder / "mixture.wav", t.mixture, subtype)
        write_wav(folder / "vocals.wav", t.vocals, subtype)
        acc = Waveform(t.accompaniment_samples(), t.sample_rate)
        write_wav(folder / "accompaniment.wav", acc, subtype)
        entries.append({
            "id": t.id,
            "split": t.split,
            "duration_s": len(t.mixture) / t.sample_rate,
            "sample_rate": t.sample_rate,
            "channels": t.mixture.channels,
        })
    manifest = {"tracks": sorted(entries, key=lambda e: (e["split"], e["id"]))}
    if seed is not None:
        manifest["seed"] = seed
    with open(root / MANIFEST, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return root


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Synthetic corpus description; ``n_tracks`` is the train split size."""

    n_tracks: int = 20
    duration_s: float = 4.0
    sample_rate: int = 16000
    seed: int = 42
    channels: int = 2
    n_valid: int = 2
    n_test: int = 5

    def __post_init__(self):
        check_positive_int(self.n_tracks, "n_tracks", minimum=0)
        check_positive_int(self.n_valid, "n_valid", minimum=0)
        check_positive_int(self.n_test, "n_test", minimum=0)
        check_positive_int(self.sample_rate, "sample_rate")
        check_positive_int(self.channels, "channels")
        if self.duration_s <= 0:
            raise ConfigurationError(f"duration_s must be > 0, got {self.duration_s}")

    def count(self, split):
        return {"train": self.n_tracks, "valid": self.n_valid, "test": self.n_test}[split]

    def to_dict(self):
        return asdict(self)


_GRID = 2.0**15   # stems live on the 16-bit PCM grid so sums are exact
_PEAK = 0.9


def _harmonic_tone(rng, f0_track, sr, n_harm=None):
    """Sum of harmonics following the instantaneous f0 in ``f0_track``."""
    n_harm = n_harm or int(rng.integers(3, 7))
    rolloff = rng.uniform(0.7, 1.5)
    phase = 2 * np.pi * np.cumsum(f0_track) / sr
    out = np.zeros_like(f0_track)
    for h in range(1, n_harm + 1):
        if h * f0_track.max() >= 0.45 * sr:
            break
        amp = h ** -rolloff * rng.uniform(0.6, 1.0)
        out += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return out


def _envelope(n, sr, attack, release):
    env = np.ones(n)
    a, r = min(int(attack * sr), n // 2), min(int(release * sr), n // 2)
    if a:
        env[:a] = np.linspace(0.0, 1.0, a)
    if r:
        env[n - r:] = np.linspace(1.0, 0.0, r)
    return env


def _vocal_line(rng, n, sr):
    out = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.2) * sr)
    while pos < n:
        dur = int(rng.uniform(0.3, 0.9) * sr)
        seg = min(dur, n - pos)
        t = np.arange(seg) / sr
        f0 = 220.0 * 3.0 ** rng.uniform(0.0, 1.0)   # 220..660 Hz
        rate, depth = rng.uniform(4.5, 7.0), rng.uniform(0.3, 0.8)
        onset = rng.uniform(0.05, 0.15)
        ramp = np.clip((t - onset) / 0.1, 0.0, 1.0)
        vibrato = 2.0 ** (depth * ramp * np.sin(2 * np.pi * rate * t) / 12.0)
        tone = _harmonic_tone(rng, f0 * vibrato, sr)
        swell = np.linspace(rng.uniform(0.6, 1.0), rng.uniform(0.8, 1.2), seg)
        out[pos:pos + seg] += tone * swell * _envelope(seg, sr, rng.uniform(0.02, 0.06), 0.08)
        pos += dur + int(rng.uniform(0.0, 0.15) * sr)
    return out


def _accompaniment_parts(rng, n, sr):
    beat = int(60.0 / rng.uniform(90, 140) * sr)
    t_all = np.arange(n) / sr
    low = np.zeros(n)
    hats = np.zeros(n)
    b_lo = scipy.signal.butter(4, 150.0, "low", fs=sr, output="sos")
    b_hi = scipy.signal.butter(4, min(4000.0, 0.4 * sr), "high", fs=sr, output="sos")
    for k, start in enumerate(range(0, n, beat)):
        seg = min(beat, n - start)
        t = t_all[:seg]
        f0 = rng.uniform(45.0, 95.0)
        bass = np.sin(2 * np.pi * f0 * t) + 0.3 * np.sin(4 * np.pi * f0 * t)
        low[start:start + seg] += bass * np.exp(-t / rng.uniform(0.15, 0.4))
        kick = scipy.signal.sosfilt(b_lo, rng.standard_normal(seg))
        low[start:start + seg] += 4.0 * kick * np.exp(-t / 0.06)
        off = start + beat // 2
        if off < n:
            hseg = min(beat // 4, n - off)
            hats[off:off + hseg] += (scipy.signal.sosfilt(b_hi, rng.standard_normal(hseg))
                                     * np.exp(-t_all[:hseg] / 0.02))
    # steady tones sharing the vocal range but without vibrato
    pads = np.zeros(n)
    pos = 0
    while pos < n:
        seg = min(int(rng.uniform(0.8, 2.0) * sr), n - pos)
        f0 = 220.0 * 3.0 ** rng.uniform(0.0, 1.0)
        pads[pos:pos + seg] += (_harmonic_tone(rng, np.full(seg, f0), sr)
                                * _envelope(seg, sr, 0.1, 0.2))
        pos += seg
    return low, hats, pads


def _rms(x):
    return np.sqrt(np.mean(x**2)) + 1e-12


def _synth_track(seed_seq, spec, track_id, split):
    rng = np.random.default_rng(seed_seq)
    sr = spec.sample_rate
    n = int(round(spec.duration_s * sr))
    voc = _vocal_line(rng, n, sr)
    low, hats, pads = _accompaniment_parts(rng, n, sr)
    low /= _rms(low)
    hats *= 0.25 / _rms(hats)
    rhythm = low + hats
    rhythm *= _rms(voc) / _rms(rhythm) * 10 ** (rng.uniform(-2.0, 2.0) / 20)
    # pads as loud as the voice: within a single frame the two look alike,
    # only vibrato and note timing tell them apart
    pads *= _rms(voc) / _rms(pads) * 10 ** (rng.uniform(-3.0, 1.0) / 20)
    acc = rhythm + pads

    pans_v = rng.uniform(0.7, 1.0, spec.channels)
    pans_a = rng.uniform(0.7, 1.0, spec.channels)
    voc_c, acc_c = np.outer(pans_v, voc), np.outer(pans_a, acc)
    scale = _PEAK / max(np.max(np.abs(voc_c) + np.abs(acc_c)), 1e-12)
    voc_c = np.round(voc_c * scale * _GRID) / _GRID
    acc_c = np.round(acc_c * scale * _GRID) / _GRID
    return TrackPair(
        track_id,
        mixture=Waveform(voc_c + acc_c, sr),
        vocals=Waveform(voc_c, sr),
        split=split,
        accompaniment=Waveform(acc_c, sr),
    )


def synth_dataset(spec=None, split="train"):
    """Deterministic synthetic tracks for ``split``.

    Vocals are harmonic tones (220-660 Hz fundamentals, 3-6 partials) with
    vibrato, swells and note gaps.  The accompaniment has a rhythm part below
    200 Hz (bass line and low noise bursts) with quiet high-passed noise, plus
    steady, vibrato-free harmonic tones in the vocal range at roughly the
    voice's level.
    """
    spec = spec or SynthSpec()
    if split not in SPLITS:
        raise InvalidInputError(f"split must be one of {SPLITS}, got {split!r}")
    split_idx = SPLITS.index(split)
    return [
        _synth_track(np.random.SeedSequence([spec.seed, split_idx, i]), spec,
                     f"{split}_{i:03d}", split)
        for i in range(spec.count(split))
    ]


def synth_splits(spec=None):
    spec = spec or SynthSpec()
    return {split: synth_dataset(spec, split) for split in SPLITS}
