#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Длительные сквозные проверки (ANYTSR_SLOW=1): пресет tiny, дообученный на
8 синтетических изображениях, должен обгонять бикубику при x2 на тех же
изображениях; каждая абляция проходит тот же прогон.
"""

import logging
import math
import os

import numpy as np
import pytest

from anytsr.app.config import ABLATIONS, PRESETS, load_run_config
from anytsr.app.evaluator import Evaluator
from anytsr.app.trainer import Trainer
from anytsr.core.dataset import synth_dataset

pytestmark = pytest.mark.slow

logger = logging.getLogger(__name__)

TINY_CONFIG = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "tiny.cfg")
MAX_STEPS = 600
MARGIN_DB = 0.5
ABLATION_SLACK_DB = 0.3

# абляция -> переключатель в отчете оценщика
ABLATION_FLAGS = {"no_ssb_scale": "ssb_scale", "no_sam": "sam", "no_lle": "lle", "no_orm": "orm"}


@pytest.fixture(scope="module")
def train_images():
    return synth_dataset(8, 96, np.random.default_rng(21))


def overfit(images, ablation="full"):
    config = load_run_config(TINY_CONFIG, {"ablation": ablation, "max_steps": MAX_STEPS, "log_every": 50})
    for key, value in PRESETS["tiny"].items():
        assert config.get(key) == value, key
    trainer = Trainer(config, images)
    result = trainer.train()
    assert 0 < result.steps <= MAX_STEPS
    assert all(math.isfinite(loss) for loss in result.losses)
    named = [(f"train_{i}.png", img) for i, img in enumerate(images)]
    evaluator = Evaluator(trainer.model, train_scale_max=config.train.scale_range[1], model_name=ablation)
    report = evaluator.sweep(named, [2.0])
    return report


@pytest.fixture(scope="module")
def full_report(train_images):
    return overfit(train_images)


def test_beats_bicubic_on_training_images(full_report):
    (row,) = full_report.rows
    assert row.scale == 2.0
    assert len(row.scores) == 8
    assert row.psnr_model >= row.psnr_bicubic + MARGIN_DB, full_report.format_table()


@pytest.mark.parametrize("ablation", sorted(set(ABLATIONS) - {"full"}))
def test_ablation_against_full(train_images, full_report, ablation, record_property):
    report = overfit(train_images, ablation)
    assert report.flags[ABLATION_FLAGS[ablation]] is False
    assert all(report.flags[name] for name in ABLATION_FLAGS.values() if name != ABLATION_FLAGS[ablation])

    (row,) = report.rows
    (full,) = full_report.rows
    assert math.isfinite(row.psnr_model)
    record_property("psnr_x2_" + ablation, row.psnr_model)
    record_property("psnr_x2_full", full.psnr_model)
    logger.info("x2 PSNR: %s %.3f дБ, full %.3f дБ", ablation, row.psnr_model, full.psnr_model)
    if row.psnr_model > full.psnr_model + ABLATION_SLACK_DB:
        logger.warning("Абляция %s обгоняет полную модель больше чем на %.1f дБ", ablation, ABLATION_SLACK_DB)
