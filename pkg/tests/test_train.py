"""Optimizer arithmetic, schedule endpoints, loop determinism, text formats."""

import numpy as np
import pytest

from fronto.augment import pool_from_labels
from fronto.errors import InvariantViolation, NonFiniteGradient, OutOfRange
from fronto.image import ImageBuffer
from fronto.model import HEAD_FOUR, Model, ModelConfig, load_params
from fronto.train import (
    OptimizerState,
    TrainConfig,
    format_history,
    format_train_config,
    lr_at,
    mean_corner_error,
    optimizer_step,
    parse_history,
    parse_train_config,
    train,
    train_config_meta,
    validation_mce,
    with_seed,
)

SMALL = ModelConfig(size=16, channels=1, widths=(3, 4), head=HEAD_FOUR)


def toy_data(n, size, seed=0, mag=3.0):
    rng = np.random.default_rng(seed)
    imgs = rng.uniform(0.1, 0.9, size=(n, size, size, 1))
    labels = np.zeros((n, 4))
    for i in range(n):
        if rng.random() < 0.5:
            labels[i, 0] = rng.uniform(-mag, mag)
            labels[i, 3] = rng.uniform(-mag, mag)
        else:
            labels[i, 1] = rng.uniform(-mag, mag)
            labels[i, 2] = rng.uniform(-mag, mag)
    return imgs, labels


class TestTrainConfig:
    def test_defaults_match_protocol(self):
        cfg = TrainConfig()
        assert cfg.epochs == 51 and cfg.batch_size == 80
        assert cfg.lr0 == 1e-4 and cfg.lr_min == 1e-6
        assert cfg.weight_decay == 1e-4
        assert (cfg.beta1, cfg.beta2) == (0.9, 0.999)

    def test_invariants(self):
        with pytest.raises(InvariantViolation):
            TrainConfig(epochs=0)
        with pytest.raises(InvariantViolation):
            TrainConfig(lr_min=1e-3, lr0=1e-4)
        with pytest.raises(InvariantViolation):
            TrainConfig(lr_min=-1e-9)
        with pytest.raises(InvariantViolation):
            TrainConfig(beta1=1.0)
        TrainConfig(lr0=0.0, lr_min=0.0)  # zero lr expressible for no-op runs


class TestSchedule:
    def test_first_epoch_is_lr0(self):
        assert lr_at(TrainConfig(), 0) == 1e-4

    def test_final_epoch_is_lr_min(self):
        assert lr_at(TrainConfig(), 50) == 1e-6

    def test_midpoint(self):
        assert lr_at(TrainConfig(), 25) == pytest.approx((1e-4 + 1e-6) / 2, rel=1e-12)

    def test_monotone_decreasing(self):
        cfg = TrainConfig()
        vals = [lr_at(cfg, e) for e in range(51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_single_epoch_uses_lr0(self):
        assert lr_at(TrainConfig(epochs=1), 0) == 1e-4

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            lr_at(TrainConfig(), 51)
        with pytest.raises(OutOfRange):
            lr_at(TrainConfig(), -1)


class TestOptimizerStep:
    def test_zero_grad_zero_decay_no_op(self):
        cfg = TrainConfig(weight_decay=0.0)
        vec = np.array([0.5, -1.5, 2.0])
        state = OptimizerState(3)
        out = optimizer_step(vec, np.zeros(3), state, 1e-3, cfg)
        assert np.array_equal(out, vec)

    def test_hand_computed_single_step(self):
        cfg = TrainConfig()
        p0 = 0.7
        lr = 1e-3
        state = OptimizerState(1)
        out = optimizer_step(np.array([p0]), np.array([1.0]), state, lr, cfg)
        # bias-corrected moments after one step with g=1 are exactly 1
        expected = p0 - lr * (1.0 / (1.0 + 1e-8) + cfg.weight_decay * p0)
        assert out[0] == pytest.approx(expected, rel=1e-12)

    def test_non_finite_gradient_aborts_cleanly(self):
        cfg = TrainConfig()
        state = OptimizerState(2)
        with pytest.raises(NonFiniteGradient):
            optimizer_step(np.zeros(2), np.array([1.0, np.nan]), state, 1e-3, cfg)
        assert state.step == 0
        assert np.array_equal(state.m, np.zeros(2))
        assert np.array_equal(state.v, np.zeros(2))

    def test_shape_mismatch(self):
        with pytest.raises(InvariantViolation):
            optimizer_step(np.zeros(3), np.zeros(2), OptimizerState(3), 1e-3, TrainConfig())

    def test_deterministic_sequence(self):
        cfg = TrainConfig()
        rng = np.random.default_rng(0)
        grads = [rng.normal(size=4) for _ in range(5)]

        def run():
            vec = np.ones(4)
            state = OptimizerState(4)
            for g in grads:
                vec = optimizer_step(vec, g, state, 1e-3, cfg)
            return vec

        assert np.array_equal(run(), run())


class TestMeanCornerError:
    def test_perfect(self):
        a = np.array([[1.0, 0, 0, 2.0]])
        assert mean_corner_error(a, a) == 0.0

    def test_uniform_offset(self):
        gt = np.zeros((3, 4))
        pred = gt + 2.0
        assert mean_corner_error(pred, gt) == pytest.approx(2.0)

    def test_single_corner_off(self):
        assert mean_corner_error(np.array([[4.0, 0, 0, 0]]), np.zeros((1, 4))) == pytest.approx(1.0)

    def test_rejects_bad_shapes(self):
        with pytest.raises(InvariantViolation):
            mean_corner_error(np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(InvariantViolation):
            mean_corner_error(np.zeros((0, 4)), np.zeros((0, 4)))

    def test_validation_mce_zero_params(self):
        model = Model(SMALL)
        params = model.init_params(0)
        imgs, labels = toy_data(5, 16, seed=1)
        assert validation_mce(model, params, imgs, labels) == pytest.approx(np.abs(labels).mean())


class TestTrainLoop:
    def test_zero_lr_single_epoch_no_op(self):
        model = Model(SMALL)
        imgs, labels = toy_data(4, 16, seed=2)
        cfg = TrainConfig(epochs=1, batch_size=4, lr0=0.0, lr_min=0.0, seed=3)
        result = train(model, imgs, labels, imgs, labels, cfg)
        assert len(result.history) == 1
        assert np.array_equal(result.final_params.vector, model.init_params(3).vector)

    def test_fixed_seed_bitwise_reproducible(self):
        model = Model(SMALL)
        imgs, labels = toy_data(8, 16, seed=4)
        pool = pool_from_labels(labels)
        cfg = TrainConfig(epochs=3, batch_size=4, lr0=1e-3, lr_min=1e-4, seed=7,
                          augment_probability=0.5)
        r1 = train(model, imgs, labels, imgs, labels, cfg, pool=pool)
        r2 = train(model, imgs, labels, imgs, labels, cfg, pool=pool)
        assert np.array_equal(r1.final_params.vector, r2.final_params.vector)
        assert np.array_equal(r1.best_params.vector, r2.best_params.vector)
        assert r1.history == r2.history

    def test_different_seeds_differ(self):
        model = Model(SMALL)
        imgs, labels = toy_data(8, 16, seed=4)
        cfg = TrainConfig(epochs=2, batch_size=4, lr0=1e-3, lr_min=1e-4, seed=0)
        r1 = train(model, imgs, labels, imgs, labels, cfg)
        r2 = train(model, imgs, labels, imgs, labels, with_seed(cfg, 1))
        assert not np.array_equal(r1.final_params.vector, r2.final_params.vector)

    def test_overfit_single_batch_monotone(self):
        model = Model(SMALL)
        imgs, labels = toy_data(6, 16, seed=5, mag=2.0)
        cfg = TrainConfig(epochs=14, batch_size=6, lr0=3e-3, lr_min=1e-5, seed=1,
                          augment_probability=0.0)
        result = train(model, imgs, labels, imgs, labels, cfg)
        losses = [row["train_loss"] for row in result.history]
        for i in range(3, len(losses) - 1):
            assert losses[i + 1] <= losses[i] * 1.05, (i, losses)
        assert losses[-1] < losses[0]

    def test_best_checkpoint_selection(self, tmp_path):
        model = Model(SMALL)
        imgs, labels = toy_data(8, 16, seed=6)
        ckpt = tmp_path / "best.ckpt"
        cfg = TrainConfig(epochs=4, batch_size=4, lr0=1e-3, lr_min=1e-4, seed=2)
        result = train(model, imgs, labels, imgs, labels, cfg, checkpoint_path=ckpt)
        val_rows = [r for r in result.history if "val_mce" in r]
        assert result.best_val_mce == min(r["val_mce"] for r in val_rows)
        assert result.history[result.best_epoch]["val_mce"] == result.best_val_mce
        saved = load_params(ckpt, expected_fingerprint=model.cfg.fingerprint())
        assert np.array_equal(saved.vector, result.best_params.vector)

    def test_eval_every_skips_epochs(self):
        model = Model(SMALL)
        imgs, labels = toy_data(4, 16, seed=7)
        cfg = TrainConfig(epochs=4, batch_size=4, lr0=1e-3, lr_min=1e-4, eval_every=2)
        result = train(model, imgs, labels, imgs, labels, cfg)
        has_val = ["val_mce" in r for r in result.history]
        assert has_val == [True, False, True, True]  # final epoch always scored

    def test_history_file_written(self, tmp_path):
        model = Model(SMALL)
        imgs, labels = toy_data(4, 16, seed=8)
        hist = tmp_path / "history.txt"
        cfg = TrainConfig(epochs=2, batch_size=4, lr0=1e-3, lr_min=1e-4, seed=5)
        result = train(model, imgs, labels, imgs, labels, cfg, history_path=hist)
        meta, rows = parse_history(hist.read_text())
        assert meta["epochs"] == 2 and meta["seed"] == 5
        assert [r["epoch"] for r in rows] == [0, 1]
        assert rows[0]["train_loss"] == result.history[0]["train_loss"]

    def test_progress_callback(self):
        model = Model(SMALL)
        imgs, labels = toy_data(4, 16, seed=9)
        seen = []
        cfg = TrainConfig(epochs=2, batch_size=4, lr0=1e-3, lr_min=1e-4)
        train(model, imgs, labels, imgs, labels, cfg, progress=seen.append)
        assert [r["epoch"] for r in seen] == [0, 1]


class TestTextFormats:
    def test_config_round_trip(self):
        cfg = TrainConfig(epochs=30, batch_size=16, lr0=3e-3, lr_min=1e-5,
                          weight_decay=2e-4, seed=11, augment_probability=0.25)
        back = parse_train_config(format_train_config(cfg))
        assert back == cfg

    def test_history_round_trip_exact_floats(self):
        rows = [
            {"epoch": 0, "lr": 1e-4, "train_loss": 0.123456789012345678, "val_mce": 3.25},
            {"epoch": 1, "lr": 9.87e-5, "train_loss": 0.1},
        ]
        meta = train_config_meta(TrainConfig(epochs=2, batch_size=4, lr0=1e-4, lr_min=1e-6))
        back_meta, back_rows = parse_history(format_history(rows, meta))
        assert back_rows == rows
        assert back_meta["epochs"] == 2

    def test_metadata_records_augment_probability(self):
        on = train_config_meta(TrainConfig(augment_probability=0.5))
        off = train_config_meta(TrainConfig(augment_probability=0.0))
        assert on["augment_probability"] == 0.5
        assert off["augment_probability"] == 0.0
        assert on != off

    def test_with_seed(self):
        cfg = TrainConfig(seed=0)
        assert with_seed(cfg, 9).seed == 9
        assert with_seed(cfg, 9).epochs == cfg.epochs
