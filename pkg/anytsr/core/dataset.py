#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Наборы данных: синтетический генератор тепловизионно-подобных сцен,
чтение каталога <root>/train|test и параллельная выборка обучающих пар.
"""

import glob
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from anytsr.core.errors import DataError
from anytsr.utils.imaging import (
    IMAGE_EXTENSIONS,
    PatchPair,
    load_image,
    sample_patch_pair,
    save_image,
)

logger = logging.getLogger(__name__)

MIN_SYNTH_SIZE = 64
MIN_SYNTH_STD = 0.02


def _smooth_field(size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.meshgrid(np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij")
    field = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 7))):
        fy, fx = rng.uniform(0.3, 2.5, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        field += rng.uniform(0.2, 1.0) * np.sin(2.0 * np.pi * (fy * ys + fx * xs) + phase)
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0.0, 1.0, size=2)
        width = rng.uniform(0.08, 0.3)
        field += rng.uniform(0.5, 1.5) * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * width ** 2))
    return field


def _add_structures(field: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    size = field.shape[0]
    ys, xs = np.mgrid[0:size, 0:size]
    span = float(field.max() - field.min()) or 1.0
    out = field.copy()
    # нагретые прямоугольники (крыши, техника)
    for _ in range(int(rng.integers(3, 9))):
        h, w = rng.integers(size // 16, size // 3, size=2)
        y0 = int(rng.integers(0, size - h))
        x0 = int(rng.integers(0, size - w))
        out[y0:y0 + h, x0:x0 + w] += rng.uniform(-0.8, 1.2) * span
    # тонкие линии (дороги, кромки)
    for _ in range(int(rng.integers(2, 6))):
        angle = rng.uniform(0.0, np.pi)
        offset = rng.uniform(0.2, 0.8) * size
        distance = np.abs((xs - size / 2.0) * np.cos(angle) + (ys - size / 2.0) * np.sin(angle) - offset + size / 2.0)
        out[distance < rng.uniform(0.6, 2.0)] += rng.uniform(-0.6, 0.9) * span
    return out


def synth_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Одно синтетическое изображение: гладкое поле, резкие прямоугольники и линии, слабый шум

    Args:
        size: Сторона изображения
        rng: Источник случайности

    Returns:
        Массив (size, size) в [0, 1]
    """
    img = _add_structures(_smooth_field(size, rng), rng)
    img = img + rng.normal(0.0, 0.01 * float(np.std(img) or 1.0), size=img.shape)
    low, high = float(img.min()), float(img.max())
    img = (img - low) / ((high - low) or 1.0)
    lo = rng.uniform(0.02, 0.15)
    hi = rng.uniform(0.8, 0.98)
    return np.clip(lo + (hi - lo) * img, 0.0, 1.0)


def synth_dataset(count: int, size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    Синтетический набор изображений, детерминированный по сиду

    Args:
        count: Количество изображений (>= 1)
        size: Сторона изображения (>= 64)
        rng: Источник случайности

    Returns:
        Список массивов (size, size)
    """
    if count < 1:
        raise ValueError(f"Количество изображений должно быть положительным: {count}")
    if size < MIN_SYNTH_SIZE:
        raise ValueError(f"Сторона синтетического изображения должна быть не меньше {MIN_SYNTH_SIZE}: {size}")
    images = []
    while len(images) < count:
        img = synth_image(size, rng)
        if float(np.std(img)) > MIN_SYNTH_STD:
            images.append(img)
    return images


def write_synthetic_dataset(root: str, train_count: int, test_count: int, size: int, seed: int) -> Tuple[int, int]:
    """
    Запись синтетического набора в структуру <root>/train, <root>/test (16-битные PNG)

    Returns:
        Количество записанных обучающих и тестовых изображений
    """
    rng = np.random.default_rng(seed)
    for split, count in (("train", train_count), ("test", test_count)):
        if count <= 0:
            continue
        directory = os.path.join(root, split)
        os.makedirs(directory, exist_ok=True)
        for index, img in enumerate(synth_dataset(count, size, rng)):
            save_image(os.path.join(directory, f"synth_{index:04d}.png"), img, bit_depth=16)
        logger.info("Записано %d изображений в %s", count, directory)
    return train_count, test_count


def list_images(directory: str) -> List[str]:
    """Отсортированный список PNG/PGM файлов каталога"""
    if not os.path.isdir(directory):
        raise DataError(f"Каталог с данными не найден: {directory}")
    paths = []
    for ext in IMAGE_EXTENSIONS:
        paths.extend(glob.glob(os.path.join(directory, "*" + ext)))
        paths.extend(glob.glob(os.path.join(directory, "*" + ext.upper())))
    return sorted(set(paths))


def load_split(root: str, split: str) -> List[Tuple[str, np.ndarray]]:
    """
    Загрузка части набора данных

    Args:
        root: Корень набора
        split: "train" или "test"; если root сам содержит изображения, берется он

    Returns:
        Список пар (имя файла, изображение)
    """
    directory = os.path.join(root, split)
    if not os.path.isdir(directory) and os.path.isdir(root) and list_images(root):
        directory = root
    paths = list_images(directory)
    if not paths:
        raise DataError(f"В каталоге нет изображений PNG/PGM: {directory}")
    logger.info("Найдено %d изображений в %s", len(paths), directory)
    return [(os.path.basename(path), load_image(path)) for path in paths]


class PatchSampler:
    """Выборка обучающих пар; каждая задача получает собственный сидированный генератор"""

    def __init__(self, images: Sequence[np.ndarray], lr_size: int, workers: int = 1):
        if not images:
            raise DataError("Пустой набор обучающих изображений")
        self.images = list(images)
        self.lr_size = lr_size
        self.workers = max(1, int(workers))
        self._executor: Optional[ThreadPoolExecutor] = None
        if self.workers > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="patches")

    def _sample_one(self, scale: float, task: Tuple[int, int]) -> PatchPair:
        index, seed = task
        return sample_patch_pair(self.images[index], scale, self.lr_size, np.random.default_rng(seed))

    def sample(self, scale: float, tasks: Sequence[Tuple[int, int]]) -> List[PatchPair]:
        """
        Выборка пакета пар одного масштаба

        Args:
            scale: Масштаб пакета
            tasks: Пары (индекс изображения, сид)

        Returns:
            Пары в порядке задач
        """
        if self._executor is None:
            return [self._sample_one(scale, task) for task in tasks]
        return list(self._executor.map(lambda task: self._sample_one(scale, task), tasks))

    def min_side(self) -> int:
        return min(min(img.shape) for img in self.images)

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
