#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import logging
import math
import os
import sys
import zlib
from typing import List, Optional, Sequence

import numpy as np
import torch

from anytsr.core.errors import DivergenceError

logger = logging.getLogger(__name__)

THREADS_ENV = "ANYTSR_THREADS"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Стандартная развертка масштабов (x1.45 ... x6)
BENCHMARK_SCALES = [
    1.45, 1.55, 1.7, 1.8, 2.0, 2.2, 2.3, 2.45, 2.65, 2.8, 3.0, 3.1, 3.3, 3.55, 3.7,
    3.9, 4.0, 4.25, 4.4, 4.5, 4.6, 4.85, 5.0, 5.2, 5.3, 5.5, 5.8, 5.9, 6.0,
]

# Цепочки синтеза: один шаг x6, два шага x2 -> x6, три шага x2 -> x4 -> x6
BENCHMARK_CHAINS = [[6.0], [2.0, 3.0], [2.0, 2.0, 1.5]]


def validate_scale(scale: float) -> bool:
    """
    Валидация коэффициента масштабирования

    Args:
        scale: Коэффициент s

    Returns:
        True если s конечен и s >= 1, False иначе
    """
    try:
        value = float(scale)
    except (TypeError, ValueError):
        return False
    return math.isfinite(value) and value >= 1.0


def validate_image_size(height: int, width: int, minimum: int = 3) -> bool:
    """
    Валидация размеров изображения

    Args:
        height: Высота в пикселях
        width: Ширина в пикселях
        minimum: Минимально допустимый размер по каждой оси

    Returns:
        True если обе стороны не меньше minimum
    """
    return int(height) >= minimum and int(width) >= minimum


def scaled_size(size: int, scale: float) -> int:
    """
    Размер после масштабирования с округлением половины вверх

    Args:
        size: Исходный размер
        scale: Коэффициент масштабирования

    Returns:
        max(1, floor(size * scale + 0.5))
    """
    return max(1, int(math.floor(size * scale + 0.5)))


def parse_scale_list(text: str) -> List[float]:
    """
    Парсинг списка масштабов

    Args:
        text: Строка вида "1.45,2,3" или имя набора "benchmark"

    Returns:
        Список масштабов (пустая строка дает пустой список)

    Raises:
        ValueError: Нечисловое значение или масштаб меньше 1
    """
    text = text.strip()
    if text.lower() == "benchmark":
        return list(BENCHMARK_SCALES)
    if not text:
        return []
    scales = []
    for part in text.split(","):
        part = part.strip()
        try:
            value = float(part)
        except ValueError:
            raise ValueError(f"Неверный масштаб: {part!r}")
        if not validate_scale(value):
            raise ValueError(f"Масштаб должен быть конечным и не меньше 1: {part!r}")
        scales.append(value)
    return scales


def parse_chain_list(text: str) -> List[List[float]]:
    """
    Парсинг набора цепочек синтеза

    Args:
        text: Цепочки через ";" и шаги через "," ("6;2,3;2,2,1.5") или "benchmark"

    Returns:
        Список цепочек
    """
    text = text.strip()
    if text.lower() == "benchmark":
        return [list(chain) for chain in BENCHMARK_CHAINS]
    chains = []
    for chunk in text.split(";"):
        chain = parse_scale_list(chunk)
        if not chain:
            raise ValueError(f"Пустая цепочка в {text!r}")
        chains.append(chain)
    return chains


def format_chain(chain: Sequence[float]) -> str:
    """
    Кумулятивная запись цепочки: [2, 3] -> "->2->6"

    Args:
        chain: Последовательность масштабов шагов

    Returns:
        Строка с накопленными масштабами
    """
    label = ""
    total = 1.0
    for step in chain:
        total *= step
        label += "->" + f"{total:g}"
    return label


def derive_seed(seed: int, consumer: str) -> int:
    """
    Детерминированное получение подсида для отдельного потребителя случайности

    Args:
        seed: Общий сид запуска
        consumer: Имя потребителя ("init", "data", ...)

    Returns:
        63-битный подсид
    """
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(consumer.encode("utf-8"))])
    return int(sequence.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def ensure_finite(tensor: torch.Tensor, where: str) -> torch.Tensor:
    """Проверка тензора на конечность; при NaN/Inf выбрасывает DivergenceError"""
    if not bool(torch.isfinite(tensor).all()):
        logger.error("Нечисловые значения в %s", where)
        raise DivergenceError(f"нечисловые значения в {where}")
    return tensor


def resolve_threads(flag_value: Optional[int] = None) -> Optional[int]:
    """
    Число потоков вычислений: флаг CLI имеет приоритет над ANYTSR_THREADS

    Returns:
        Число потоков или None, если ограничение не задано
    """
    if flag_value:
        return int(flag_value)
    env_value = os.environ.get(THREADS_ENV, "").strip()
    if env_value:
        try:
            threads = int(env_value)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} должна быть целым числом: {env_value!r}")
        return threads if threads > 0 else None
    return None


def setup_logging(verbosity: int = 0) -> None:
    """Настройка единого обработчика логов в stderr"""
    level = logging.DEBUG if verbosity > 0 else logging.INFO
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)
