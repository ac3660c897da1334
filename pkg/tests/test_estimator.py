import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import harmonic_signal
from scoreenhance.estimator import ScoreEnhancer, SpectrogramTransformer
from scoreenhance.scorenet import NetConfig, save_checkpoint


def pairs(n=2, length=3000, seed=0):
    rng = np.random.default_rng(seed)
    clean = [harmonic_signal(length + 311 * i, 150, rng) for i in range(n)]
    noisy = [c + 0.05 * rng.standard_normal(c.size) for c in clean]
    return noisy, clean


@pytest.fixture(scope="module")
def fitted():
    noisy, clean = pairs()
    est = ScoreEnhancer(net="tiny", epochs=1, batch_size=2, crop_frames=16, n_steps=3, max_steps=1)
    return est.fit(noisy, clean), noisy, clean


class TestTransformer:
    def test_round_trip(self):
        x = np.random.default_rng(0).standard_normal(2000)
        tr = SpectrogramTransformer().fit(x)
        spec = tr.transform(x)
        assert spec.shape == (257, 2000 // 128 + 1)
        assert np.max(np.abs(tr.inverse_transform(spec, lengths=2000) - x)) < 1e-9

    def test_list_input_and_default_lengths(self):
        waves = [np.ones(1000), np.ones(1300)]
        tr = SpectrogramTransformer(n_fft=256, hop=64).fit(waves)
        specs = tr.transform(waves)
        assert tr.lengths_ == [1000, 1300] and [s.shape[0] for s in specs] == [129, 129]
        back = tr.inverse_transform(specs)
        assert [b.size for b in back] == [64 * (s.shape[1] - 1) for s in specs]

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            SpectrogramTransformer().transform(np.ones(600))

    def test_bad_params_surface_on_fit(self):
        with pytest.raises(ValueError):
            SpectrogramTransformer(alpha=2.0).fit(np.ones(600))


class TestEnhancerParams:
    def test_get_set_clone(self):
        est = ScoreEnhancer(gamma=2.0, n_steps=10)
        p = est.get_params()
        assert p["gamma"] == 2.0 and p["n_steps"] == 10 and p["net"] == "mini"
        c = clone(est.set_params(snr_r=0.2))
        assert c.get_params() == est.get_params() and not hasattr(c, "model_")

    def test_validation(self):
        est = ScoreEnhancer(net="tiny")
        with pytest.raises(ValueError):
            est.fit([np.ones(800)], [np.ones(800), np.ones(800)])
        with pytest.raises(ValueError):
            est.fit([np.array([0.1, np.nan] * 400)], [np.ones(800)])
        with pytest.raises(ValueError):
            est.fit([np.ones((2, 400))], [np.ones(800)])
        with pytest.raises(ValueError, match="preset"):
            ScoreEnhancer(net="huge").fit([np.ones(800)], [np.ones(800)])
        with pytest.raises(NotFittedError):
            ScoreEnhancer().predict(np.ones(800))


class TestEnhancerFit:
    def test_fit_attributes(self, fitted):
        est, _, _ = fitted
        assert est.n_iter_ == 1 and len(est.loss_curve_) == 1
        assert est.network().config == NetConfig.tiny()

    def test_predict_lengths_and_determinism(self, fitted):
        est, noisy, _ = fitted
        a = est.predict(noisy)
        b = est.predict(noisy)
        assert [x.size for x in a] == [x.size for x in noisy]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        single = est.predict(noisy[0])
        assert single.ndim == 1 and np.array_equal(single, a[0])

    def test_blend_zero_returns_input(self, fitted):
        est, noisy, _ = fitted
        out = clone(est).set_params(blend=0.0)
        out.ema_model_ = est.ema_model_
        assert np.max(np.abs(out.predict(noisy[0]) - noisy[0])) < 1e-6

    def test_score_is_mean_si_sdr(self, fitted):
        est, noisy, clean = fitted
        assert np.isfinite(est.score(noisy, clean))

    def test_from_checkpoint(self, fitted, tmp_path):
        est, noisy, _ = fitted
        ema = dict(est.ema_model_.named_parameters())
        save_checkpoint(tmp_path / "m.npz", est.model_, ema, extra={"sde": {"gamma": 1.5, "sigma_min": 0.05,
                                                                           "sigma_max": 0.5}})
        loaded = ScoreEnhancer.from_checkpoint(tmp_path / "m.npz", n_steps=3)
        assert loaded.get_params()["gamma"] == 1.5
        assert np.array_equal(loaded.predict(noisy[0]), est.predict(noisy[0]))
