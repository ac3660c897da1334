import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from scoreenhance.dataio import ToyGaussianDataset
from scoreenhance.errors import DimensionError, DivergenceError
from scoreenhance.oracle import toy_score_error_ratio
from scoreenhance.scorenet import NetConfig, ScoreNet, load_checkpoint
from scoreenhance.sde import SdeParams, kernel_mean, kernel_variance
from scoreenhance.trainer import (
    LOG_COLUMNS,
    AdamState,
    TrainConfig,
    adam_step,
    dsm_loss,
    ema_update,
    item_rng,
    perturb_batch,
    train,
)

P = SdeParams()
TOY = NetConfig.tiny()


def toy(n=8, shape=(4, 4)):
    return ToyGaussianDataset(n, shape)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(t_min=0.0), dict(t_min=1.0), dict(ema_decay=1.0), dict(ema_decay=0.0),
                                    dict(loss_weighting="l1"), dict(batch_size=0), dict(epochs=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.batch_size, c.t_min, c.ema_decay, c.loss_weighting) == (1e-4, 32, 0.03, 0.999, "none")


class TestPerturb:
    @given(st.integers(0, 10_000))
    def test_t_never_below_t_min(self, seed):
        x0 = np.zeros((16, 2, 2), dtype=complex)
        rngs = [item_rng(seed, 0, i) for i in range(16)]
        batch = perturb_batch(x0, x0 + 1, P, rngs, t_min=0.03)
        assert np.all(batch.t >= 0.03) and np.all(batch.t <= 1.0)

    def test_item_independent_of_batching(self):
        x0 = np.random.default_rng(0).standard_normal((4, 3)) + 0j
        full = perturb_batch(x0, x0, P, [item_rng(1, 2, i) for i in range(4)])
        one = perturb_batch(x0[2:3], x0[2:3], P, [item_rng(1, 2, 2)])
        assert np.array_equal(full.x_t[2], one.x_t[0]) and full.t[2] == one.t[0]

    def test_errors(self):
        with pytest.raises(ValueError):
            perturb_batch(np.zeros((0, 2)), np.zeros((0, 2)), P, [])
        with pytest.raises(DimensionError):
            perturb_batch(np.zeros((1, 2)), np.zeros((1, 3)), P, np.random.default_rng(0))


class TestDsmLoss:
    @given(st.integers(0, 10_000))
    def test_conditional_score_gives_zero(self, seed):
        # exact kernel score -(x_t - mean) / sigma^2 reproduces the target
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal((1, 3, 2)) + 1j * rng.standard_normal((1, 3, 2))
        y = x0 + 0.3

        def conditional(x_t, t, yy):
            return -(x_t - kernel_mean(x0[0], yy, t, P)) / kernel_variance(t, P)

        loss, grads = dsm_loss(x0, y, conditional, P, [item_rng(seed, 0, 0)])
        assert grads is None and loss < 1e-20

    def test_zero_model_unweighted(self):
        n = 4000
        x0 = np.zeros((n, 2, 2), dtype=complex)
        rngs = [item_rng(0, 0, i) for i in range(n)]
        loss, _ = dsm_loss(x0, x0, lambda x, t, y: np.zeros_like(x), P, rngs)
        expect = integrate.quad(lambda t: 1 / kernel_variance(t, P), 0.03, 1)[0] / 0.97
        # 1/sigma^2 is heavy near t_min, so allow a loose Monte-Carlo band
        assert abs(loss / expect - 1) < 0.1

    def test_zero_model_sigma2_weighting(self):
        n = 4000
        x0 = np.zeros((n, 2, 2), dtype=complex)
        rngs = [item_rng(0, 0, i) for i in range(n)]
        loss, _ = dsm_loss(x0, x0, lambda x, t, y: np.zeros_like(x), P, rngs, weighting="sigma2")
        assert abs(loss - 1) < 4 * math.sqrt(2 / (8 * n))

    def test_torch_path_matches_numpy_path(self):
        from scoreenhance.scorenet import NetScore

        model = ScoreNet(TOY).double()
        x0 = np.random.default_rng(1).standard_normal((3, 4, 4)) + 0j
        y = x0 + 0.5
        a, grads = dsm_loss(x0, y, model, P, [item_rng(0, 0, i) for i in range(3)])
        score = NetScore(model)
        b, _ = dsm_loss(x0, y, lambda x, t, yy: score(x[None], t, yy[None])[0], P,
                        [item_rng(0, 0, i) for i in range(3)])
        assert a == pytest.approx(b, rel=1e-10) and set(grads) == set(dict(model.named_parameters()))

    def test_non_finite_raises(self):
        x0 = np.zeros((1, 2), dtype=complex)
        with pytest.raises(DivergenceError):
            dsm_loss(x0, x0, lambda x, t, y: np.full_like(x, np.nan), P, [item_rng(0, 0, 0)])


class TestAdam:
    def test_first_step_value(self):
        p = {"w": torch.zeros(1, dtype=torch.float64)}
        adam_step(p, {"w": torch.ones(1, dtype=torch.float64)}, AdamState(), 1e-4)
        assert float(p["w"]) == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)

    def test_zero_gradients(self):
        p = {"w": torch.tensor([0.3, -2.0])}
        before = p["w"].clone()
        state = AdamState()
        for _ in range(5):
            adam_step(p, {"w": torch.zeros(2)}, state, 1e-2)
        assert torch.equal(p["w"], before)

    def test_constant_gradient_steps_toward_lr(self):
        p = {"w": torch.zeros(1, dtype=torch.float64)}
        state = AdamState()
        last = 0.0
        for _ in range(2000):
            prev = float(p["w"])
            adam_step(p, {"w": torch.full((1,), -3.0, dtype=torch.float64)}, state, 1e-3)
            last = float(p["w"]) - prev
        assert last > 0 and last == pytest.approx(1e-3, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step({"w": torch.zeros(2)}, {"w": torch.zeros(3)}, AdamState(), 1e-3)


class TestEma:
    def test_examples(self):
        s = {"w": torch.zeros(1, dtype=torch.float64)}
        ema_update(s, {"w": torch.ones(1, dtype=torch.float64)}, 0.999)
        assert float(s["w"]) == pytest.approx(0.001, rel=1e-12)
        s = {"w": torch.tensor([1.5])}
        ema_update(s, {"w": torch.tensor([1.5])}, 0.9)
        assert float(s["w"]) == 1.5

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0.01, 0.99))
    def test_within_envelope(self, history, decay):
        s = {"w": torch.tensor([history[0]], dtype=torch.float64)}
        for v in history:
            ema_update(s, {"w": torch.tensor([v], dtype=torch.float64)}, decay)
        assert min(history) - 1e-12 <= float(s["w"]) <= max(history) + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ema_update({"w": torch.zeros(2)}, {"w": torch.zeros(3)}, 0.5)


class TestTrain:
    def test_lr_zero_leaves_params(self):
        cfg = TrainConfig(learning_rate=0.0, batch_size=8, epochs=1)
        res = train(toy(), TOY, cfg, P)
        ref = ScoreNet(TOY)
        for n, p in res.model.named_parameters():
            assert torch.equal(p, dict(ref.named_parameters())[n])
        assert len(res.losses) == 1 and math.isfinite(res.losses[0])

    def test_deterministic(self):
        cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=2)
        assert train(toy(), TOY, cfg, P).losses == train(toy(), TOY, cfg, P).losses

    def test_epochs_zero_writes_init_only(self, tmp_path):
        res = train(toy(), TOY, TrainConfig(epochs=0), P, out_dir=tmp_path)
        assert res.losses == [] and (tmp_path / "last.npz").exists() and not (tmp_path / "best.npz").exists()
        ck = load_checkpoint(tmp_path / "last.npz")
        for n, p in ScoreNet(TOY).named_parameters():
            assert np.array_equal(ck.params[n], p.detach().numpy())

    def test_resume_reproduces_next_loss(self, tmp_path):
        cfg2 = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=2)
        straight = train(toy(), TOY, cfg2, P)
        train(toy(), TOY, TrainConfig(learning_rate=1e-3, batch_size=4, epochs=1), P, out_dir=tmp_path)
        resumed = train(toy(), TOY, cfg2, P, resume=tmp_path / "last.npz")
        assert resumed.losses == straight.losses[2:]

    def test_log_and_checkpoints(self, tmp_path):
        train(toy(), TOY, TrainConfig(learning_rate=1e-3, batch_size=4, epochs=2), P, out_dir=tmp_path)
        rows = list(csv.reader((tmp_path / "train_log.csv").open()))
        assert tuple(rows[0]) == LOG_COLUMNS and len(rows) == 5
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
        ck = load_checkpoint(tmp_path / "last.npz")
        assert ck.extra["epochs_done"] == 2 and ck.adam_step == 4
        assert ck.extra["sde"] == {"gamma": 1.5, "sigma_min": 0.05, "sigma_max": 0.5}
        assert (tmp_path / "best.npz").exists()


def _toy_run(steps):
    torch.manual_seed(0)
    ds = ToyGaussianDataset(32 * 50, (8, 8))
    cfg = TrainConfig(learning_rate=3e-4, epochs=1000)
    return train(ds, NetConfig.mini(), cfg, P, max_steps=steps)


@pytest.fixture(scope="module")
def toy_run():
    return _toy_run(300)


@pytest.mark.xfail(strict=True, reason="unweighted DSM loss has an irreducible floor close to its starting value")
def test_loss_halves_on_toy_task(toy_run):
    losses = np.asarray(toy_run.losses)
    k = len(losses) // 10
    assert np.median(losses[-k:]) < 0.5 * np.median(losses[:k])


def test_score_error_drops_on_toy_task(toy_run):
    # the DSM loss is dominated by its floor, so compare scores against the exact one instead
    before = toy_score_error_ratio(ScoreNet(NetConfig.mini()), P)
    after = toy_score_error_ratio(toy_run.model, P)
    assert before > 0.9 and after < 0.5 * before
