"""Complex-as-channels U-Nets with pluggable intermediate blocks for
singing voice separation."""

from .blocks import BlockSpec, build_block, parameter_count
from .data import SynthSpec, TrackPair, load_dataset, synth_dataset
from .estimator import CaCTransformer, UNetSeparator
from .evaluation import EvalReport, sdr_frame, sdr_track
from .spectral import SpectroTensor, StftParams, Waveform, istft, stft
from .training import TrainConfig, Trainer
from .unet import ModelConfig, PRESETS, build_model, count_model_params, preset

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "CaCTransformer",
    "EvalReport",
    "ModelConfig",
    "PRESETS",
    "SpectroTensor",
    "StftParams",
    "SynthSpec",
    "TrackPair",
    "TrainConfig",
    "Trainer",
    "UNetSeparator",
    "Waveform",
    "build_block",
    "build_model",
    "count_model_params",
    "istft",
    "load_dataset",
    "parameter_count",
    "preset",
    "sdr_frame",
    "sdr_track",
    "stft",
    "synth_dataset",
]
