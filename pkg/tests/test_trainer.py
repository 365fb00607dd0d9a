import math

import numpy as np
import pytest

from simcon import losses
from simcon.config import ExperimentConfig
from simcon.errors import NonFiniteLoss
from simcon.trainer import (
    SCALE_KEY,
    OptimizerState,
    adamw_step,
    eval_alignment,
    eval_retrieval,
    init_model,
    train,
    training_step,
)
from tests.conftest import unit_rows


def small_cfg(**kw):
    base = dict(loss_kind="mv_simcon", n_train=256, n_eval=128, batch_size=64, epochs=3,
                warmup_epochs=1, embed_dim=8, image_dim=16, text_dim=12)
    base.update(kw)
    return ExperimentConfig(**base)


class TestAdamW:
    def test_first_step_by_hand(self):
        p = {"w": np.array([1.0])}
        adamw_step(OptimizerState(), p, {"w": np.array([0.5])}, lr=0.1)
        # bias-corrected m/sqrt(v) = 0.5 / 0.5 on the first step
        assert p["w"][0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-15)

    def test_decay_applied_before_update(self):
        p = {"w": np.array([1.0]), "b": np.array([1.0])}
        g = {"w": np.array([0.5]), "b": np.array([0.5])}
        adamw_step(OptimizerState(), p, g, lr=0.1, weight_decay=0.1, decay_keys={"w"})
        step = 0.1 * 0.5 / (0.5 + 1e-8)
        assert p["w"][0] == pytest.approx(1.0 * (1 - 0.1 * 0.1) - step, abs=1e-15)
        assert p["b"][0] == pytest.approx(1.0 - step, abs=1e-15)

    def test_zero_grad_only_decays(self):
        p = {"w": np.array([2.0, -4.0])}
        adamw_step(OptimizerState(), p, {"w": np.zeros(2)}, lr=0.01, weight_decay=0.5)
        np.testing.assert_allclose(p["w"], np.array([2.0, -4.0]) * (1 - 0.005))

    def test_zero_lr_is_noop(self):
        rng = np.random.default_rng(0)
        p = {"w": rng.standard_normal((3, 2))}
        before = p["w"].copy()
        opt = OptimizerState()
        for _ in range(3):
            adamw_step(opt, p, {"w": rng.standard_normal((3, 2))}, lr=0.0, weight_decay=0.1)
        assert np.array_equal(p["w"], before)
        assert opt.step == 3

    def test_moments_accumulate(self):
        p = {"w": np.array([0.0])}
        opt = OptimizerState()
        adamw_step(opt, p, {"w": np.array([1.0])}, lr=0.1)
        adamw_step(opt, p, {"w": np.array([1.0])}, lr=0.1)
        assert opt.m["w"][0] == pytest.approx(0.1 * 0.9 + 0.1)
        assert opt.v["w"][0] == pytest.approx(0.001 * 0.999 + 0.001)


class TestRetrieval:
    def test_perfect(self):
        z = np.eye(4)
        assert eval_retrieval(z, z) == (1.0, 1.0)

    def test_confusable_pair(self):
        zi = np.eye(4)
        zt = np.eye(4)
        zt[[0, 1]] = zt[[1, 0]]
        assert eval_retrieval(zi, zt) == (0.5, 0.5)

    def test_ties_go_to_lowest_index(self):
        zi = np.array([[1.0, 0.0], [1.0, 0.0]])
        zt = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert eval_retrieval(zi, zt) == (0.5, 0.5)

    def test_random_near_chance(self):
        rng = np.random.default_rng(5)
        protos = unit_rows(rng, 10, 16)
        z = unit_rows(rng, 2000, 16)
        classes = rng.integers(0, 10, size=2000)
        assert eval_alignment(z, classes, protos) == pytest.approx(0.1, abs=0.03)

    def test_alignment_exact(self):
        protos = np.eye(2)
        z = np.array([[1.0, 0.1], [0.2, 1.0], [0.9, 0.0]])
        assert eval_alignment(z, [0, 1, 1], protos) == pytest.approx(2 / 3)


class TestTrainingStep:
    @pytest.mark.parametrize("kind", ["infonce", "simcon", "mv_simcon"])
    def test_gradient_keys_match_params(self, kind):
        cfg = small_cfg(loss_kind=kind)
        model = init_model(cfg, 0)
        rng = np.random.default_rng(0)
        images = rng.standard_normal((8, cfg.image_dim))
        texts = rng.standard_normal((8, cfg.text_dim))
        out, grads = training_step(cfg, model, images, texts, 0.9, rng)
        assert set(grads) == set(model.params(True))
        assert math.isfinite(out.value)

    def test_scale_gradient_sign(self):
        # d/ds of the loss at tau = exp(-s) equals -tau * dL/dtau
        cfg = small_cfg(loss_kind="infonce")
        model = init_model(cfg, 1)
        rng = np.random.default_rng(1)
        images = rng.standard_normal((8, cfg.image_dim))
        texts = rng.standard_normal((8, cfg.text_dim))
        out, grads = training_step(cfg, model, images, texts, 0.9, rng)
        h = 1e-6
        s = float(model.scale[0])
        model.scale[0] = s + h
        up = training_step(cfg, model, images, texts, 0.9, rng)[0].value
        model.scale[0] = s - h
        down = training_step(cfg, model, images, texts, 0.9, rng)[0].value
        assert grads[SCALE_KEY][0] == pytest.approx((up - down) / (2 * h), rel=1e-5)

    def test_no_head_without_ncs(self):
        model = init_model(small_cfg(use_ncs=False), 0)
        assert model.head is None
        assert not any(k.startswith("head.") for k in model.params(True))

    def test_tau_frozen_when_not_learned(self):
        assert SCALE_KEY not in init_model(small_cfg(), 0).params(False)


class TestTrain:
    def test_deterministic(self):
        cfg = small_cfg(epochs=2)
        a = [m.as_dict() for m in train(cfg)]
        b = [m.as_dict() for m in train(cfg)]
        for row in a + b:
            row.pop("seconds")
        assert a == b

    def test_seed_changes_run(self):
        cfg = small_cfg(epochs=2)
        assert train(cfg, seed=0)[-1].loss != train(cfg, seed=1)[-1].loss

    def test_history_fields(self):
        cfg = small_cfg(loss_kind="infonce", epochs=3)
        hist = train(cfg)
        assert [m.epoch for m in hist] == [1, 2, 3]
        assert all(math.isnan(m.lam) for m in hist)
        assert all(losses.TAU_MIN <= m.tau <= losses.TAU_MAX for m in hist)

    def test_lambda_follows_schedule(self):
        cfg = small_cfg(loss_kind="simcon", epochs=4, lambda_decay_epochs=(1, 3))
        assert [m.lam for m in train(cfg)] == pytest.approx([0.95, 0.90, 0.90, 0.85])

    def test_smoke_loss_decreases(self):
        cfg = ExperimentConfig(loss_kind="mv_simcon", n_train=2000, batch_size=128, epochs=5)
        hist = train(cfg)
        assert hist[-1].loss < hist[0].loss
        assert all(math.isfinite(m.loss) for m in hist)

    def test_nonfinite_loss_raises(self):
        cfg = small_cfg(loss_kind="infonce", epochs=1, warmup_epochs=0)
        model = init_model(cfg, 0)
        model.image.weights[0][0, 0] = np.nan
        with pytest.raises(NonFiniteLoss):
            train(cfg, model=model)


class TestPositiveGrowth:
    def test_positives_grow_as_lambda_drops(self):
        # a frozen batch of clustered embeddings
        rng = np.random.default_rng(2)
        centers = unit_rows(rng, 4, 8)
        z = centers[rng.integers(0, 4, size=32)] + 0.15 * rng.standard_normal((32, 8))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        counts = []
        for lam in (0.95, 0.90, 0.85):
            p_i, _ = losses.positive_masks(z @ z.T, z @ z.T, lam)
            counts.append(p_i.positives_per_anchor.mean())
        assert counts == sorted(counts)
        assert counts[-1] > counts[0]
