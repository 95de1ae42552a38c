import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cacunet._validation import InvalidInputError
from cacunet.data import synth_dataset
from cacunet.estimator import CaCTransformer, UNetSeparator


class TestCaCTransformer:
    def test_round_trip(self, rng):
        n = np.arange(3000)
        x = np.stack([np.sin(2 * np.pi * 4 * n / 64), np.cos(2 * np.pi * 9 * n / 64)])
        tr = CaCTransformer(n_fft=64, hop=32, sample_rate=8000).fit(x)
        t = tr.transform(x)
        assert t.shape == (4, 1 + 3000 // 32, 32)
        y = tr.inverse_transform(t)
        np.testing.assert_allclose(y[:, 64:-64], x[:, 64:-64], atol=1e-10)

    def test_magnitude_mode_keeps_phase(self):
        n = np.arange(2000)
        x = np.sin(2 * np.pi * 3 * n / 64)[None]
        tr = CaCTransformer(n_fft=64, hop=16, mode="magnitude")
        t = tr.fit_transform(x)
        assert t.shape[0] == 1 and np.all(t >= 0)
        np.testing.assert_allclose(tr.inverse_transform(t)[:, 64:-64], x[:, 64:-64], atol=1e-10)

    def test_get_set_params(self):
        tr = CaCTransformer(n_fft=512)
        assert tr.get_params()["n_fft"] == 512
        assert clone(tr.set_params(hop=128)).hop == 128

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            CaCTransformer().transform(np.zeros((1, 4096)))

    def test_channel_count_checked(self):
        tr = CaCTransformer(n_fft=64, hop=32).fit(np.zeros((2, 256)))
        with pytest.raises(InvalidInputError):
            tr.transform(np.zeros((1, 256)))

    def test_bad_mode(self):
        with pytest.raises(InvalidInputError):
            CaCTransformer(mode="polar").fit(np.zeros((1, 256)))


class TestUNetSeparator:
    def test_fit_predict_score(self, tiny_synth):
        tracks = synth_dataset(tiny_synth, "train")
        X = [t.mixture.samples for t in tracks]
        y = [t.vocals.samples for t in tracks]
        est = UNetSeparator(preset="tfctdf7", n_fft=256, sample_rate=8000, n_steps=3,
                            batch_size=2, clip_frames=8, seed=0)
        assert est.fit(X, y) is est
        assert len(est.loss_curve_) == 3 and est.n_channels_ == 2
        pred = est.predict(X[:1])
        assert pred[0].shape == X[0].shape
        assert np.isfinite(est.score(X[:2], y[:2]))

    def test_clone_is_unfitted(self):
        est = UNetSeparator(n_steps=5)
        fresh = clone(est)
        assert fresh.get_params() == est.get_params()
        with pytest.raises(NotFittedError):
            fresh.predict([np.zeros((2, 4096))])

    def test_mode_override(self):
        cfg = UNetSeparator(mode="magnitude", n_fft=512)._model_config()
        assert cfg.mode == "magnitude" and cfg.stft.n_fft == 512

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            UNetSeparator().fit([np.zeros((2, 10))], [])
