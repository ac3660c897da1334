"""scikit-learn style front end.

``SpectrogramTransformer`` maps waveforms to the transformed complex STFT
domain and back. ``ScoreEnhancer`` trains the score network on
``(noisy, clean)`` waveform pairs with ``fit`` and enhances with
``predict``. Both follow the estimator conventions (constructor arguments
are stored verbatim, learned state ends in an underscore), so ``get_params``,
``set_params`` and ``clone`` work as usual.

Waveform collections are passed as a 1-D array (one utterance) or a
sequence of 1-D arrays of possibly different lengths.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataio import UtterancePair
from .dsp import StftConfig, TransformConfig, from_model_domain, to_model_domain
from .metrics import si_sdr
from .pipeline import SpectrogramPairDataset, enhance_waveform, utterance_rng
from .sampler import SamplerConfig
from .scorenet import NetConfig, NetScore, ScoreNet, load_checkpoint
from .sde import SdeParams
from .trainer import TrainConfig, ema_model, train

_PRESETS = {"tiny": NetConfig.tiny, "mini": NetConfig.mini, "full": NetConfig.full}


def _waveforms(X, name="X"):
    """Normalize input to a list of finite float64 1-D arrays; returns (list, was_single)."""
    if isinstance(X, np.ndarray) and X.ndim == 1:
        return [check_array(X, ensure_2d=False, dtype=np.float64, input_name=name)], True
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [check_array(row, ensure_2d=False, dtype=np.float64, input_name=name) for row in X], False
    out = [check_array(np.asarray(x), ensure_2d=False, dtype=np.float64, input_name=name) for x in X]
    if any(x.ndim != 1 for x in out):
        raise ValueError(f"{name} must hold 1-D waveforms")
    if not out:
        raise ValueError(f"{name} is empty")
    return out, False


class SpectrogramTransformer(TransformerMixin, BaseEstimator):
    """Waveform <-> compressed complex spectrogram."""

    def __init__(self, n_fft=512, hop=128, alpha=0.5, beta=3.0):
        self.n_fft = n_fft
        self.hop = hop
        self.alpha = alpha
        self.beta = beta

    def fit(self, X, y=None):
        self.stft_config_ = StftConfig(self.n_fft, self.hop)
        self.transform_config_ = TransformConfig(self.alpha, self.beta)
        waves, _ = _waveforms(X)
        self.lengths_ = [len(w) for w in waves]
        return self

    def transform(self, X):
        check_is_fitted(self, "stft_config_")
        waves, single = _waveforms(X)
        specs = [to_model_domain(w, self.stft_config_, self.transform_config_) for w in waves]
        return specs[0] if single else specs

    def inverse_transform(self, X, lengths=None):
        """Map spectrograms back to waveforms.

        ``lengths`` defaults to ``hop * (frames - 1)``, the longest signal that
        yields the given frame count.
        """
        check_is_fitted(self, "stft_config_")
        single = isinstance(X, np.ndarray) and X.ndim == 2
        specs = [X] if single else list(X)
        if lengths is None:
            lengths = [self.hop * (s.shape[-1] - 1) for s in specs]
        elif np.isscalar(lengths):
            lengths = [int(lengths)]
        waves = [
            from_model_domain(s, n, self.stft_config_, self.transform_config_)
            for s, n in zip(specs, lengths)
        ]
        return waves[0] if single else waves


class ScoreEnhancer(BaseEstimator):
    """Score-based speech enhancer.

    ``fit(X, y)`` takes noisy waveforms ``X`` and the matching clean
    waveforms ``y``; ``predict(X)`` returns enhanced waveforms of the same
    lengths, sampled with the EMA weights.
    """

    def __init__(
        self,
        net="mini",
        gamma=1.5,
        sigma_min=0.05,
        sigma_max=0.5,
        learning_rate=1e-4,
        batch_size=32,
        epochs=1,
        ema_decay=0.999,
        loss_weighting="none",
        crop_frames=256,
        n_steps=50,
        t_eps=0.03,
        snr_r=0.33,
        corrector_steps=1,
        n_fft=512,
        hop=128,
        alpha=0.5,
        beta=3.0,
        blend=1.0,
        max_steps=None,
        random_state=0,
    ):
        self.net = net
        self.gamma = gamma
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.ema_decay = ema_decay
        self.loss_weighting = loss_weighting
        self.crop_frames = crop_frames
        self.n_steps = n_steps
        self.t_eps = t_eps
        self.snr_r = snr_r
        self.corrector_steps = corrector_steps
        self.n_fft = n_fft
        self.hop = hop
        self.alpha = alpha
        self.beta = beta
        self.blend = blend
        self.max_steps = max_steps
        self.random_state = random_state

    # configuration objects are derived from the flat hyperparameters
    def _sde(self):
        return SdeParams(self.gamma, self.sigma_min, self.sigma_max)

    def _sampler(self):
        return SamplerConfig(self.n_steps, self.t_eps, self.snr_r, self.corrector_steps)

    def _stft(self):
        return StftConfig(self.n_fft, self.hop)

    def _transform(self):
        return TransformConfig(self.alpha, self.beta)

    def _net_config(self):
        if isinstance(self.net, NetConfig):
            return self.net
        if isinstance(self.net, dict):
            return NetConfig(**self.net)
        try:
            return _PRESETS[self.net](seed=int(self.random_state or 0))
        except KeyError:
            raise ValueError(f"unknown net preset {self.net!r}; choose from {sorted(_PRESETS)}") from None

    def fit(self, X, y):
        noisy, _ = _waveforms(X, "X")
        clean, _ = _waveforms(y, "y")
        if len(noisy) != len(clean):
            raise ValueError(f"{len(noisy)} noisy but {len(clean)} clean waveforms")
        pairs = [UtterancePair(str(i), n, 0, c) for i, (n, c) in enumerate(zip(noisy, clean))]
        dataset = SpectrogramPairDataset(pairs, self._stft(), self._transform(), self.crop_frames)
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            t_min=self.t_eps,
            ema_decay=self.ema_decay,
            loss_weighting=self.loss_weighting,
            seed=int(self.random_state or 0),
        )
        result = train(dataset, self._net_config(), cfg, self._sde(), max_steps=self.max_steps)
        self.model_ = result.model
        self.ema_model_ = ema_model(result)
        self.loss_curve_ = list(result.losses)
        self.n_iter_ = len(result.losses)
        return self

    @classmethod
    def from_checkpoint(cls, path, **params):
        """Build a fitted enhancer from a checkpoint file."""
        ckpt = load_checkpoint(path)
        sde = ckpt.extra.get("sde", {})
        est = cls(net=ckpt.config, **{**sde, **params})
        est.model_ = ckpt.build("raw")
        est.ema_model_ = ckpt.build("ema")
        est.loss_curve_ = []
        est.n_iter_ = 0
        return est

    def _score_model(self):
        check_is_fitted(self, "ema_model_")
        return NetScore(self.ema_model_)

    def predict(self, X):
        waves, single = _waveforms(X)
        score = self._score_model()
        out = [
            enhance_waveform(
                w, score, self._sde(), self._sampler(), self._stft(), self._transform(),
                rng=utterance_rng(self.random_state or 0, i), blend=self.blend,
            )
            for i, w in enumerate(waves)
        ]
        return out[0] if single else out

    def score(self, X, y):
        """Mean SI-SDR (dB) of the enhanced ``X`` against clean ``y``."""
        est = self.predict(X)
        est = [est] if isinstance(est, np.ndarray) and est.ndim == 1 else est
        clean, _ = _waveforms(y, "y")
        return float(np.mean([si_sdr(e, c) for e, c in zip(est, clean)]))

    def network(self) -> ScoreNet:
        check_is_fitted(self, "ema_model_")
        return self.ema_model_
