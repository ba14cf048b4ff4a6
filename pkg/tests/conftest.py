#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os

import numpy as np
import pytest
import torch

from anytsr.app.config import build_config
from anytsr.core.dataset import synth_dataset
from anytsr.core.model import build_model

SMALL_VALUES = {
    "channels": 8,
    "layers": 1,
    "blocks": 1,
    "bank_size": 2,
    "d_state": 4,
    "sam_hidden": 16,
    "neo_width": 16,
    "neo_heads": 2,
    "lr_size": 8,
    "batch": 2,
    "epochs": 2,
    "repeats_per_image": 2,
    "warmup_epochs": 1,
    "log_every": 1,
}


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ANYTSR_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="длительный прогон: установите ANYTSR_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def small_config(**overrides):
    """Уменьшенная конфигурация для быстрых тестов"""
    values = dict(SMALL_VALUES)
    values.update(overrides)
    return build_config(values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config():
    return small_config()


@pytest.fixture
def model(config):
    torch.manual_seed(0)
    return build_model(config.encoder, config.upsampler, seed=0)


@pytest.fixture(scope="session")
def synth_images():
    return synth_dataset(4, 64, np.random.default_rng(7))


@pytest.fixture
def make_config():
    return small_config
