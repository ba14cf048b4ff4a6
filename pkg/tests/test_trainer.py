#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Тесты цикла обучения"""

import os

import numpy as np
import pytest
import torch

from anytsr.app.trainer import (
    CHECKPOINT_NAME,
    CONFIG_NAME,
    LOSS_LOG_NAME,
    Trainer,
    l1_loss,
    lr_schedule,
    steps_per_epoch,
)
from anytsr.core.errors import DataError, DivergenceError


def test_l1_loss():
    pred = torch.tensor([0.0, 0.5, 1.0])
    gt = torch.tensor([0.25, 0.5, 0.0])
    assert float(l1_loss(pred, gt)) == pytest.approx((0.25 + 0.0 + 1.0) / 3)
    with pytest.raises(ValueError):
        l1_loss(torch.zeros(0), torch.zeros(0))
    with pytest.raises(ValueError):
        l1_loss(torch.zeros(3), torch.zeros(4))


def test_steps_per_epoch():
    assert steps_per_epoch(8, 20, 16) == 10
    assert steps_per_epoch(1, 1, 16) == 1


class TestSchedule:
    def test_endpoints(self, make_config):
        cfg = make_config(epochs=10, warmup_epochs=2, lr_init=1e-4, lr_max=1e-3).train
        total = 10 * 5
        assert lr_schedule(0, cfg, 5) == pytest.approx(1e-4)
        assert lr_schedule(10, cfg, 5) == pytest.approx(1e-3)
        assert lr_schedule(total - 1, cfg, 5) == pytest.approx(1e-4)

    def test_shape(self, make_config):
        cfg = make_config(epochs=10, warmup_epochs=2, lr_init=1e-4, lr_max=1e-3).train
        values = [lr_schedule(step, cfg, 5) for step in range(50)]
        assert all(b > a for a, b in zip(values[:10], values[1:11]))
        assert all(b <= a for a, b in zip(values[10:], values[11:]))
        # непрерывность на границе разогрева
        assert abs(values[10] - values[9]) < 2 * (1e-3 - 1e-4) / 10
        assert all(1e-4 - 1e-12 <= v <= 1e-3 + 1e-12 for v in values)

    def test_no_warmup(self, make_config):
        cfg = make_config(epochs=3, warmup_epochs=0, lr_init=1e-4, lr_max=1e-3).train
        assert lr_schedule(0, cfg, 4) == pytest.approx(1e-3)

    def test_negative_step(self, config):
        with pytest.raises(ValueError):
            lr_schedule(-1, config.train, 1)


def test_every_parameter_receives_gradient(config, synth_images):
    trainer = Trainer(config, synth_images)
    pairs = trainer.sample_batch()
    trainer.train_step(pairs, lr=1e-4)
    for name, param in trainer.model.named_parameters():
        assert param.grad is not None, name
        assert torch.count_nonzero(param.grad) > 0, name
    trainer.sampler.close()


def test_batch_has_one_scale(config, synth_images):
    trainer = Trainer(config, synth_images)
    for _ in range(3):
        pairs = trainer.sample_batch()
        scale = pairs[0].scale
        low, high = config.train.scale_range
        assert low <= scale <= high
        assert all(p.scale == scale for p in pairs)
        trainer.batch_in_epoch += 1
    trainer.sampler.close()


def test_small_images_rejected(config):
    with pytest.raises(DataError, match="меньше кропа"):
        Trainer(config, [np.zeros((20, 20))])


def test_empty_dataset(config):
    with pytest.raises(DataError):
        Trainer(config, [])


def test_divergence(config, synth_images):
    trainer = Trainer(config, synth_images)
    with torch.no_grad():
        trainer.model.upsampler.neo.proj[2].bias.fill_(float("nan"))
    with pytest.raises(DivergenceError):
        trainer.train_step(trainer.sample_batch())
    trainer.sampler.close()


def test_outputs_and_loss_log(tmp_path, config, synth_images):
    result = Trainer(config, synth_images, out_dir=str(tmp_path)).train()
    expected_steps = config.train.epochs * steps_per_epoch(len(synth_images), 2, 2)
    assert result.steps == expected_steps
    assert len(result.losses) == expected_steps
    assert os.path.exists(tmp_path / CHECKPOINT_NAME)
    assert os.path.exists(tmp_path / CONFIG_NAME)
    assert result.checkpoint.step == expected_steps
    assert result.checkpoint.epoch == config.train.epochs

    lines = (tmp_path / LOSS_LOG_NAME).read_text(encoding="utf-8").splitlines()
    assert len(lines) == expected_steps
    for number, line in enumerate(lines):
        step, epoch, scale, lr, loss = line.split("\t")
        assert int(step) == number
        assert 1.0 <= float(scale) <= 4.0
        assert float(lr) > 0
        assert float(loss) == result.losses[number]


def test_same_seed_same_losses(config, synth_images):
    first = Trainer(config, synth_images).train()
    second = Trainer(config, synth_images).train()
    assert first.losses == second.losses


def test_max_steps(tmp_path, make_config, synth_images):
    config = make_config(max_steps=3)
    result = Trainer(config, synth_images, out_dir=str(tmp_path)).train()
    assert result.steps == 3
    assert result.checkpoint.step == 3


@pytest.mark.parametrize("stop", [3, 4])
def test_resume_matches_uninterrupted(tmp_path, make_config, synth_images, stop):
    straight_dir = tmp_path / "straight"
    split_dir = tmp_path / "split"
    straight = Trainer(make_config(), synth_images, out_dir=str(straight_dir)).train()

    Trainer(make_config(max_steps=stop), synth_images, out_dir=str(split_dir)).train()
    resumed = Trainer(make_config(), synth_images, out_dir=str(split_dir))
    resumed.resume(str(split_dir / CHECKPOINT_NAME))
    assert resumed.step == stop
    result = resumed.train()

    assert result.steps == straight.steps
    for name, tensor in straight.checkpoint.model_tensors().items():
        np.testing.assert_array_equal(result.checkpoint.tensors[name], tensor, err_msg=name)
    assert (split_dir / LOSS_LOG_NAME).read_text(encoding="utf-8") == \
        (straight_dir / LOSS_LOG_NAME).read_text(encoding="utf-8")


def test_overfit_single_image(make_config, synth_images):
    config = make_config(
        scale_range="2,2", batch=1, epochs=2, repeats_per_image=25, warmup_epochs=0,
        lr_init=2e-3, lr_max=2e-3,
    )
    result = Trainer(config, synth_images[:1]).train()
    assert len(result.losses) == 50
    assert np.mean(result.losses[-10:]) < np.mean(result.losses[:10])
