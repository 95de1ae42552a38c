import json

import numpy as np
import pytest

from cacunet.checkpoint import load_checkpoint, save_checkpoint
from cacunet.cli import SCHEMA, UsageError, main, parse_overrides
from cacunet.data import SynthSpec, synth_dataset
from cacunet.evaluation import sdr_track
from cacunet.spectral import Waveform, read_wav, write_wav
from cacunet.unet import count_model_params, preset

from helpers import identity_model, small_config

TINY_SYNTH = ["--set", "synth.n_tracks=3", "--set", "synth.duration_s=0.5",
              "--set", "synth.sample_rate=8000", "--set", "synth.n_valid=1",
              "--set", "synth.n_test=2"]


def _config_file(tmp_path, **train):
    doc = {"model": small_config().to_dict(),
           "train": {"batch_size": 2, "clip_frames": 8, "max_steps": 3,
                     "validation_interval": 2, **train}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


class TestOverrides:
    def test_parses_types(self):
        out = parse_overrides(["train.lr=0.01", "model.stft.n_fft=512", "train.lr=none"])
        assert out == {"train.lr": None, "model.stft.n_fft": 512}

    def test_unknown_key_lists_valid_ones(self):
        with pytest.raises(UsageError, match="train.batch_size"):
            parse_overrides(["train.momentum=0.9"])

    def test_not_key_value(self):
        with pytest.raises(UsageError):
            parse_overrides(["train.lr"])

    def test_bad_value(self):
        with pytest.raises(UsageError):
            parse_overrides(["train.batch_size=lots"])

    def test_schema_covers_sections(self):
        assert {k.split(".")[0] for k in SCHEMA} == {"model", "train", "synth"}


class TestParams:
    def test_json_total_matches_closed_form(self, capsys):
        assert main(["params", "--preset", "tfctdf7", "--json"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["total"] == count_model_params(preset("tfctdf7"))

    def test_text_output(self, capsys):
        assert main(["params", "--preset", "tdc3"]) == 0
        assert "total" in capsys.readouterr().out

    def test_override_changes_count(self, capsys):
        main(["params", "--preset", "tfctdf7", "--json", "--set", "model.stft.n_fft=1024",
              "--set", "model.stft.hop=512"])
        small = json.loads(capsys.readouterr().out)["total"]
        assert small < count_model_params(preset("tfctdf7"))

    def test_unknown_preset_is_usage_error(self, capsys):
        assert main(["params", "--preset", "nope"]) == 2
        assert "available presets" in capsys.readouterr().err

    def test_yaml_config(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("preset: tdc3\nmodel:\n  c_internal: 24\n")
        assert main(["params", "--config", str(path), "--json"]) == 0
        assert json.loads(capsys.readouterr().out)["total"] == count_model_params(preset("tdc3"))

    def test_missing_model(self, capsys):
        assert main(["params"]) == 2

    def test_invalid_configuration(self, capsys):
        # 17 blocks cannot run on 32 bins after eight halvings
        assert main(["params", "--preset", "tdc17", "--set", "model.stft.n_fft=64",
                     "--set", "model.stft.hop=32"]) == 2


class TestTrainCommand:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--config", str(_config_file(tmp_path)), "--out", str(out),
                     "--seed", "3", "--log-every", "0", *TINY_SYNTH])
        assert code == 0
        assert {p.name for p in out.iterdir()} >= {"run.json", "metrics.csv", "last.ckpt",
                                                    "best.ckpt"}
        run = json.loads((out / "run.json").read_text())
        assert run["seed"] == 3 and run["train"]["seed"] == 3 and run["synth"]["seed"] == 3
        assert load_checkpoint(out / "last.ckpt").step == 3

    def test_steps_and_lr_flags(self, tmp_path):
        out = tmp_path / "run"
        main(["train", "--config", str(_config_file(tmp_path)), "--out", str(out),
              "--steps", "1", "--lr", "0.002", "--log-every", "0", *TINY_SYNTH])
        ck = load_checkpoint(out / "last.ckpt")
        assert ck.step == 1 and ck.optimizer["hyper"]["lr"] == pytest.approx(0.002)

    def test_missing_data_dir(self, tmp_path, capsys):
        code = main(["train", "--config", str(_config_file(tmp_path)), "--out",
                     str(tmp_path / "o"), "--data", str(tmp_path / "absent")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_bad_clip_frames_is_config_error(self, tmp_path):
        code = main(["train", "--config", str(_config_file(tmp_path, clip_frames=7)),
                     "--out", str(tmp_path / "o"), *TINY_SYNTH])
        assert code == 2

    def test_divergence_exit_code(self, tmp_path, capsys, monkeypatch):
        from cacunet import training

        def explode(self, x, y):
            raise training.TrainingDivergedError("non-finite loss at step 0")

        monkeypatch.setattr(training.Trainer, "train_step", explode)
        code = main(["train", "--config", str(_config_file(tmp_path)), "--out",
                     str(tmp_path / "o"), "--log-every", "0", *TINY_SYNTH])
        assert code == 1
        assert "non-finite loss" in capsys.readouterr().err
        assert (tmp_path / "o" / "last.ckpt").exists()

    def test_unknown_config_section(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"preset": "tdc3", "optimizer": {}}))
        assert main(["params", "--config", str(path)]) == 2


class TestEvaluateCommand:
    def test_identity_model_reports_input_sdr(self, tmp_path, capsys):
        ckpt = tmp_path / "id.ckpt"
        save_checkpoint(ckpt, identity_model(), train_config={"seed": 0})
        code = main(["evaluate", "--checkpoint", str(ckpt), "--out", str(tmp_path), "--json",
                     "--seed", "5", *TINY_SYNTH])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        spec = SynthSpec(n_tracks=3, duration_s=0.5, sample_rate=8000, n_valid=1, n_test=2,
                         seed=5)
        baseline = np.median([sdr_track(t.mixture, t.vocals)
                              for t in synth_dataset(spec, "test")])
        assert summary["median_sdr"] == pytest.approx(baseline, abs=0.01)
        assert (tmp_path / "report.csv").exists() and (tmp_path / "report.json").exists()

    def test_repeated_checkpoints_are_runs(self, tmp_path, capsys):
        ckpt = tmp_path / "id.ckpt"
        save_checkpoint(ckpt, identity_model())
        main(["evaluate", "--checkpoint", str(ckpt), "--checkpoint", str(ckpt), "--json",
              "--out", str(tmp_path), *TINY_SYNTH])
        summary = json.loads(capsys.readouterr().out)
        assert len(summary["run_medians"]) == 2
        assert summary["run_medians"][0] == summary["run_medians"][1]

    def test_missing_checkpoint(self, tmp_path):
        assert main(["evaluate", "--checkpoint", str(tmp_path / "x.ckpt")]) == 2


class TestSeparateCommand:
    def test_identity_keeps_mixture_and_subtype(self, tmp_path, capsys):
        ckpt = tmp_path / "id.ckpt"
        save_checkpoint(ckpt, identity_model())
        n = np.arange(4000)
        mix = np.round(np.stack([0.3 * np.sin(0.05 * n), 0.2 * np.sin(0.11 * n)]) * 2**23) / 2**23
        write_wav(tmp_path / "mix.wav", Waveform(mix, 8000), "PCM_24")
        code = main(["separate", str(ckpt), str(tmp_path / "mix.wav"), str(tmp_path / "v.wav")])
        assert code == 0
        out, subtype = read_wav(tmp_path / "v.wav", return_subtype=True)
        assert subtype == "PCM_24" and out.samples.shape == mix.shape
        assert np.max(np.abs(out.samples - mix)[:, 256:-256]) < 1e-4

    def test_channel_mismatch(self, tmp_path):
        ckpt = tmp_path / "id.ckpt"
        save_checkpoint(ckpt, identity_model())
        write_wav(tmp_path / "mono.wav", Waveform(np.zeros(1000), 8000))
        assert main(["separate", str(ckpt), str(tmp_path / "mono.wav"),
                     str(tmp_path / "o.wav")]) == 2

    def test_corrupt_input(self, tmp_path):
        ckpt = tmp_path / "id.ckpt"
        save_checkpoint(ckpt, identity_model())
        (tmp_path / "bad.wav").write_bytes(b"garbage")
        assert main(["separate", str(ckpt), str(tmp_path / "bad.wav"),
                     str(tmp_path / "o.wav")]) == 2


class TestSynthCommand:
    def test_writes_dataset(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--seed", "9", *TINY_SYNTH]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 9 and len(manifest["tracks"]) == 6
        assert json.loads((tmp_path / "synth.json").read_text())["sample_rate"] == 8000

    def test_train_from_written_dataset(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "d"), *TINY_SYNTH])
        code = main(["train", "--config", str(_config_file(tmp_path)), "--data",
                     str(tmp_path / "d"), "--out", str(tmp_path / "r"), "--log-every", "0"])
        assert code == 0


def test_help_lists_presets_and_keys(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    assert "tfctdf9_large" in text and "train.batch_size" in text
