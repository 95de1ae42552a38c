import json

import numpy as np
import pytest
import torch

from cacunet._validation import ConfigurationError, InvalidInputError
from cacunet.blocks import BlockSpec
from cacunet.spectral import SpectroTensor, StftParams
from cacunet.unet import (
    PRESETS,
    ModelConfig,
    SamplingSpec,
    build_model,
    count_model_params,
    default_lr,
    enumerate_params,
    forward,
    param_breakdown,
    preset,
)

from helpers import small_config as _small


class TestModelConfig:
    def test_even_block_count_rejected(self):
        cfg = _small()
        with pytest.raises(ConfigurationError):
            ModelConfig(stft=cfg.stft, c_internal=8, blocks=cfg.blocks[:2])

    def test_sampling_length_must_match(self):
        cfg = _small()
        with pytest.raises(ConfigurationError):
            ModelConfig(stft=cfg.stft, c_internal=8, blocks=cfg.blocks,
                        sampling=[SamplingSpec(1, 2, 0), SamplingSpec(1, 2, 1)])

    def test_channel_chain_checked(self):
        cfg = _small()
        bad = list(cfg.blocks)
        bad[2] = BlockSpec("TDC", 8, 8, growth_rate=4, num_layers=2, kernel_f=3)
        with pytest.raises(ConfigurationError, match="skip"):
            ModelConfig(stft=cfg.stft, c_internal=8, blocks=bad)

    def test_frequency_divisibility(self):
        cfg = _small()
        sampling = [SamplingSpec(1, 2, i) for i in range(8)]
        blocks = [cfg.blocks[0]] * 8 + [cfg.blocks[0]] + [cfg.blocks[2]] * 8
        with pytest.raises(ConfigurationError):
            ModelConfig(stft=StftParams(64, 32), c_internal=8, blocks=blocks, sampling=sampling)

    def test_identity_sampling_rejected(self):
        with pytest.raises(ConfigurationError):
            SamplingSpec(1, 1)

    def test_block_bins(self):
        assert _small().block_bins() == [32, 16, 32]
        assert _small(sampling=()).block_bins() == [32, 32, 32]

    def test_dict_round_trip(self):
        cfg = _small()
        again = ModelConfig.from_dict(json.loads(cfg.to_json()))
        assert again == cfg

    def test_unknown_key(self):
        d = _small().to_dict()
        d["depth"] = 3
        with pytest.raises(ConfigurationError):
            ModelConfig.from_dict(d)

    def test_io_channels(self):
        assert _small("cac").io_channels == 4
        assert _small("magnitude").io_channels == 2


class TestUNet:
    @pytest.mark.parametrize("mode", ["cac", "magnitude"])
    def test_shape_preserved(self, mode):
        cfg = _small(mode)
        model = build_model(cfg)
        x = torch.randn(3, cfg.io_channels, 8, 32)
        assert model(x).shape == x.shape

    def test_magnitude_output_non_negative(self):
        model = build_model(_small("magnitude"))
        assert torch.all(model(torch.randn(2, 2, 8, 32)) >= 0)

    def test_rejects_wrong_channels(self):
        model = build_model(_small())
        with pytest.raises(InvalidInputError, match="channels"):
            model(torch.randn(1, 2, 8, 32))

    def test_rejects_wrong_bins(self):
        model = build_model(_small())
        with pytest.raises(InvalidInputError, match="bins"):
            model(torch.randn(1, 4, 8, 30))

    def test_rejects_indivisible_frames(self):
        model = build_model(_small())
        with pytest.raises(InvalidInputError, match="divisible"):
            model(torch.randn(1, 4, 7, 32))

    def test_seeded_construction_is_reproducible(self):
        a, b = build_model(_small(), seed=5), build_model(_small(), seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        c = build_model(_small(), seed=6)
        assert not all(torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))

    def test_construction_leaves_global_rng_alone(self):
        torch.manual_seed(0)
        expected = torch.rand(1)
        torch.manual_seed(0)
        build_model(_small())
        assert torch.equal(torch.rand(1), expected)

    def test_forward_wrapper(self):
        cfg = _small()
        model = build_model(cfg)
        model.train()
        out = forward(model, SpectroTensor(np.zeros((4, 8, 32)), "cac"))
        assert out.kind == "cac" and out.shape == (4, 8, 32)
        assert model.training

    def test_skip_connections_used(self):
        # zeroing the middle path must still leave a signal via the skip
        cfg = _small(sampling=())
        model = build_model(cfg).eval()
        with torch.no_grad():
            for p in model.middle.parameters():
                p.zero_()
        out = model(torch.randn(1, 4, 8, 32))
        assert torch.any(out != model.last.conv.bias.view(1, -1, 1, 1))


class TestParamCounts:
    @pytest.mark.parametrize("name", [p for p in PRESETS if not p.endswith("_mag")])
    def test_closed_form_matches_enumeration(self, name):
        cfg = preset(name)
        model = build_model(cfg)
        assert param_breakdown(cfg) == enumerate_params(model)
        assert count_model_params(cfg) == sum(p.numel() for p in model.parameters())

    def test_small_model(self):
        cfg = _small()
        assert count_model_params(cfg) == sum(p.numel() for p in build_model(cfg).parameters())


class TestPresets:
    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            preset("tfc99")

    def test_mag_variant(self):
        cfg = preset("tfctdf7_mag")
        assert cfg.mode == "magnitude" and cfg.blocks == preset("tfctdf7").blocks

    def test_large_model_uses_longer_window(self):
        cfg = preset("tfctdf9_large")
        assert (cfg.stft.n_fft, cfg.stft.hop) == (4096, 2048)
        assert len(cfg.blocks) == 9

    def test_sampling_schedules(self):
        assert [(s.scale_t, s.scale_f) for s in preset("tfctdf7").sampling] == [(2, 2)] * 3
        assert all(s.scale_t == 1 for s in preset("tdc17").sampling)
        assert preset("tdc17_nosampling").sampling == ()
        assert preset("tfc17").time_divisor == 8
        assert preset("tfc17_timepreserve").time_divisor == 1

    def test_default_lr(self):
        assert default_lr(preset("tfctdf17")) == pytest.approx(5e-4)
        assert default_lr(preset("tfctdf7")) == pytest.approx(1e-3)

    def test_with_stft(self):
        cfg = preset("tfctdf7").with_stft(1024)
        assert cfg.stft.n_bins == 512 and cfg.stft.hop == 512
