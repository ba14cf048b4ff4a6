#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Обучение со случайным непрерывным масштабом: один масштаб на пакет,
L1 на подмножестве пикселей эталона, разогрев и косинусное затухание шага.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch

from anytsr.app.config import RunConfig
from anytsr.core.checkpoint import Checkpoint, CheckpointManager
from anytsr.core.dataset import PatchSampler
from anytsr.core.errors import CheckpointError, DataError, DivergenceError
from anytsr.core.model import AnyTSR, build_model
from anytsr.utils.helpers import derive_seed, scaled_size
from anytsr.utils.imaging import PatchPair

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CHECKPOINT_NAME = "checkpoint.atsr"
LOSS_LOG_NAME = "loss.tsv"
CONFIG_NAME = "config.cfg"


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """
    Средняя абсолютная ошибка

    Raises:
        ValueError: Пустые входы или несовпадение форм
    """
    if pred.numel() == 0 or gt.numel() == 0:
        raise ValueError("L1 на пустых входах не определена")
    if pred.shape != gt.shape:
        raise ValueError(f"Формы не совпадают: {tuple(pred.shape)} и {tuple(gt.shape)}")
    return (pred - gt).abs().mean()


def steps_per_epoch(image_count: int, repeats: int, batch: int) -> int:
    """Шагов в эпохе: images * repeats // batch, не меньше одного"""
    return max(1, image_count * repeats // batch)


def lr_schedule(step: int, config, epoch_steps: int) -> float:
    """
    Скорость обучения на шаге

    Линейный разогрев от lr_init до lr_max за warmup_epochs эпох,
    затем косинус от lr_max до lr_init на последнем шаге.

    Args:
        step: Номер шага (>= 0)
        config: TrainConfig
        epoch_steps: Шагов в эпохе

    Returns:
        Скорость обучения
    """
    if step < 0:
        raise ValueError(f"Номер шага должен быть неотрицательным: {step}")
    low, high = config.lr_init, config.lr_max
    warm = config.warmup_epochs * epoch_steps
    total = config.epochs * epoch_steps
    if step < warm:
        return low + (high - low) * step / warm
    decay = total - 1 - warm
    if decay <= 0:
        return high
    progress = min(1.0, (step - warm) / decay)
    return low + (high - low) * 0.5 * (1.0 + math.cos(math.pi * progress))


def collate(pairs: Sequence[PatchPair], dtype: torch.dtype = torch.float32):
    """Пары одного масштаба -> тензоры LR (b, 1, n, n), координат (b, K, 2) и эталона (b, K)"""
    lr = torch.as_tensor(np.stack([p.lr for p in pairs]), dtype=dtype).unsqueeze(1)
    coords = torch.as_tensor(np.stack([p.gt_coords for p in pairs]), dtype=dtype)
    values = torch.as_tensor(np.stack([p.gt_values for p in pairs]), dtype=dtype)
    return lr, coords, values


@dataclass
class TrainResult:
    """Итог обучения"""
    checkpoint: Optional[Checkpoint]
    checkpoint_path: Optional[str]
    losses: List[float] = field(default_factory=list)
    steps: int = 0


class Trainer:
    """Цикл обучения AnyTSR"""

    def __init__(self, config: RunConfig, images: Sequence[np.ndarray], out_dir: Optional[str] = None,
                 model: Optional[AnyTSR] = None):
        self.config = config
        self.train_cfg = config.train
        self.out_dir = out_dir
        self.images = list(images)
        if not self.images:
            raise DataError("Пустой набор обучающих изображений")

        crop = scaled_size(self.train_cfg.lr_size, self.train_cfg.scale_range[1])
        smallest = min(min(img.shape) for img in self.images)
        if smallest < crop:
            raise DataError(
                f"Сторона обучающего изображения {smallest} меньше кропа {crop} "
                f"(lr_size={self.train_cfg.lr_size}, масштаб до {self.train_cfg.scale_range[1]:g})"
            )

        self.model = model or build_model(config.encoder, config.upsampler, self.train_cfg.seed)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=self.train_cfg.lr_init, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        workers = 1 if self.train_cfg.deterministic else self.train_cfg.workers
        self.sampler = PatchSampler(self.images, self.train_cfg.lr_size, workers)
        self.checkpoints = CheckpointManager()
        self.rng = np.random.default_rng(derive_seed(self.train_cfg.seed, "data"))
        self.epoch_steps = steps_per_epoch(len(self.images), self.train_cfg.repeats_per_image, self.train_cfg.batch)
        self.total_steps = self.train_cfg.epochs * self.epoch_steps

        self.step = 0
        self.epoch = 0
        self.batch_in_epoch = 0
        self.order: Optional[np.ndarray] = None
        self.losses: List[float] = []

    def _path(self, name: str) -> Optional[str]:
        return os.path.join(self.out_dir, name) if self.out_dir else None

    def _epoch_order(self) -> np.ndarray:
        indexes = np.repeat(np.arange(len(self.images)), self.train_cfg.repeats_per_image)
        return self.rng.permutation(indexes)

    def sample_batch(self) -> List[PatchPair]:
        """Следующий пакет: масштаб и сиды выборки берутся из главного генератора"""
        if self.order is None:
            self.order = self._epoch_order()
        batch = self.train_cfg.batch
        start = (self.batch_in_epoch * batch) % len(self.order)
        indexes = np.take(self.order, np.arange(start, start + batch), mode="wrap")
        low, high = self.train_cfg.scale_range
        scale = float(self.rng.uniform(low, high))
        seeds = self.rng.integers(0, 2 ** 63 - 1, size=batch)
        return self.sampler.sample(scale, [(int(i), int(s)) for i, s in zip(indexes, seeds)])

    def train_step(self, pairs: Sequence[PatchPair], lr: Optional[float] = None) -> float:
        """
        Один шаг Adam на пакете пар одного масштаба

        Returns:
            Значение L1

        Raises:
            DivergenceError: Нечисловая функция потерь
        """
        scale = pairs[0].scale
        if any(p.scale != scale for p in pairs):
            raise ValueError("Все пары пакета должны иметь один масштаб")
        if lr is not None:
            for group in self.optimizer.param_groups:
                group["lr"] = lr

        self.model.train()
        dtype = self.model.dtype
        images, coords, values = collate(pairs, dtype)
        self.optimizer.zero_grad(set_to_none=True)
        pred = self.model(images, coords, scale)
        loss = l1_loss(pred, values)
        if not bool(torch.isfinite(loss)):
            logger.error("Нечисловая функция потерь на шаге %d (масштаб %.4f)", self.step, scale)
            raise DivergenceError(f"нечисловая функция потерь на шаге {self.step}, масштаб {scale:.4f}")
        loss.backward()
        if self.train_cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.train_cfg.grad_clip)
        self.optimizer.step()
        return float(loss.detach())

    def _log_loss(self, scale: float, lr: float, loss: float) -> None:
        path = self._path(LOSS_LOG_NAME)
        if path is None:
            return
        with open(path, "a", encoding="utf-8") as f:
            f.write(f"{self.step}\t{self.epoch}\t{scale!r}\t{lr!r}\t{loss!r}\n")

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "step": self.step,
            "batch_in_epoch": self.batch_in_epoch,
            "order": None if self.order is None else [int(i) for i in self.order],
            "rng": self.rng.bit_generator.state,
        }

    def save_checkpoint(self) -> Checkpoint:
        checkpoint = Checkpoint(self.checkpoints.collect(self.model, self.optimizer), self.metadata())
        path = self._path(CHECKPOINT_NAME)
        if path is not None:
            self.checkpoints.write(path, checkpoint)
        return checkpoint

    def resume(self, path: str) -> None:
        """
        Продолжение с контрольной точки: веса, моменты Adam, счетчики и состояние ГСЧ

        Raises:
            CheckpointError: Файл не читается или не совпадает с моделью
        """
        checkpoint = self.checkpoints.load(path)
        self.checkpoints.apply_to_model(checkpoint, self.model)
        self.checkpoints.apply_to_optimizer(checkpoint, self.model, self.optimizer)
        state = checkpoint.rng_state
        if state is None:
            raise CheckpointError(f"в {path} нет состояния генератора")
        self.rng.bit_generator.state = state
        self.epoch = checkpoint.epoch
        self.step = checkpoint.step
        self.batch_in_epoch = int(checkpoint.metadata.get("batch_in_epoch", 0))
        order = checkpoint.metadata.get("order")
        self.order = np.asarray(order, dtype=np.int64) if order is not None and self.batch_in_epoch else None
        logger.info("Продолжение с эпохи %d, шаг %d", self.epoch, self.step)

    def train(self) -> TrainResult:
        """
        Полный цикл: epochs x steps_per_epoch шагов, контрольные точки в конце эпох

        Returns:
            TrainResult с последней контрольной точкой и историей потерь
        """
        cfg = self.train_cfg
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(self._path(CONFIG_NAME), "w", encoding="utf-8") as f:
                f.write(self.config.to_text())
        logger.info(
            "Обучение: %d изображений, %d шагов в эпохе, %d эпох", len(self.images), self.epoch_steps, cfg.epochs
        )

        checkpoint = None
        stopped = False
        try:
            while self.epoch < cfg.epochs and not stopped:
                while self.batch_in_epoch < self.epoch_steps:
                    if cfg.max_steps and self.step >= cfg.max_steps:
                        stopped = True
                        break
                    lr = lr_schedule(self.step, cfg, self.epoch_steps)
                    pairs = self.sample_batch()
                    loss = self.train_step(pairs, lr)
                    self._log_loss(pairs[0].scale, lr, loss)
                    self.losses.append(loss)
                    if self.step % cfg.log_every == 0:
                        logger.info("шаг %d эпоха %d масштаб %.3f lr %.2e loss %.6f",
                                    self.step, self.epoch, pairs[0].scale, lr, loss)
                    self.step += 1
                    self.batch_in_epoch += 1
                if stopped:
                    break
                self.epoch += 1
                self.batch_in_epoch = 0
                self.order = None
                logger.info("Эпоха %d завершена, шаг %d", self.epoch, self.step)
                if self.epoch % cfg.checkpoint_every == 0 or self.epoch == cfg.epochs:
                    checkpoint = self.save_checkpoint()
            if stopped:
                logger.info("Достигнут предел max_steps=%d", cfg.max_steps)
                checkpoint = self.save_checkpoint()
        finally:
            self.sampler.close()

        return TrainResult(
            checkpoint=checkpoint,
            checkpoint_path=self._path(CHECKPOINT_NAME),
            losses=list(self.losses),
            steps=self.step,
        )
