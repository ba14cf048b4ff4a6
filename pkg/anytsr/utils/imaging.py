#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Подготовка изображений: ввод/вывод, бикубическая передискретизация,
градиентные операторы, координатные сетки и выборка патчей.

Изображение (ImageGray) представлено массивом numpy float64 формы (H, W)
со значениями в [0, 1]. Координатная сетка (CoordGrid): массив (h, w, 2)
с парами (y, x) центров ячеек, нормированными в (-1, 1).

Бикубическое ядро (Keys, a = -0.5):
    k(t) = (a+2)|t|^3 - (a+3)|t|^2 + 1,        |t| <= 1
    k(t) = a|t|^3 - 5a|t|^2 + 8a|t| - 4a,      1 < |t| < 2
    k(t) = 0,                                  иначе
Выход j берет отсчеты входа в точке src = (j + 0.5) * in / out - 0.5
(выравнивание по центрам пикселей), индексы за краем прижимаются к границе.
Антиалиасинг при уменьшении не применяется.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from anytsr.core.errors import DataError
from anytsr.utils.helpers import scaled_size, validate_image_size

logger = logging.getLogger(__name__)

BICUBIC_A = -0.5

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                      [1.0, -4.0, 1.0],
                      [0.0, 1.0, 0.0]])

IMAGE_EXTENSIONS = (".png", ".pgm")

_SIXTEEN_BIT_MODES = ("I;16", "I;16B", "I;16L", "I;16N", "I")


@dataclass
class GradientStack:
    """Градиенты первого (gx, gy) и второго (lap) порядка"""
    gx: np.ndarray
    gy: np.ndarray
    lap: np.ndarray


@dataclass
class PatchPair:
    """Обучающая пара: LR-патч и K пикселей эталона внутри HR-кропа"""
    lr: np.ndarray
    scale: float
    gt_coords: np.ndarray
    gt_values: np.ndarray


def load_image(path: str) -> np.ndarray:
    """
    Загрузка одноканального 8/16-битного изображения (PNG, PGM)

    Args:
        path: Путь к файлу

    Returns:
        Массив float64 (H, W) в [0, 1]

    Raises:
        DataError: Файл не найден, не читается, многоканальный или меньше 3x3
    """
    if not os.path.exists(path):
        raise DataError(f"Файл не найден: {path}")
    try:
        with Image.open(path) as image:
            image.load()
            bands = image.getbands()
            mode = image.mode
            if len(bands) != 1:
                raise DataError(f"Многоканальное изображение не поддерживается ({mode}): {path}")
            if mode == "L":
                values = np.asarray(image, dtype=np.float64) / 255.0
            elif mode in _SIXTEEN_BIT_MODES:
                values = np.asarray(image, dtype=np.float64) / 65535.0
            elif mode == "1":
                values = np.asarray(image, dtype=np.float64)
            else:
                raise DataError(f"Неподдерживаемый режим изображения {mode}: {path}")
    except DataError:
        raise
    except Exception as e:
        raise DataError(f"Не удалось прочитать изображение {path}: {e}")

    if values.ndim != 2:
        raise DataError(f"Ожидалось одноканальное изображение: {path}")
    if not validate_image_size(*values.shape):
        raise DataError(f"Изображение меньше 3x3: {path}")
    return np.clip(values, 0.0, 1.0)


def save_image(path: str, img: np.ndarray, bit_depth: int = 16) -> None:
    """
    Сохранение изображения в PNG или PGM (определяется по расширению)

    Args:
        path: Путь к файлу
        img: Массив (H, W) в [0, 1]
        bit_depth: 8 или 16
    """
    if bit_depth not in (8, 16):
        raise ValueError("Глубина цвета должна быть 8 или 16")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    values = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bit_depth == 8:
        image = Image.fromarray(np.round(values * 255.0).astype(np.uint8))
    elif path.lower().endswith(".pgm"):
        # PPM-плагин Pillow пишет режим "I" как 16-битный P5
        image = Image.fromarray(np.round(values * 65535.0).astype(np.int32))
    else:
        image = Image.fromarray(np.round(values * 65535.0).astype(np.uint16))
    image.save(path)


def _cubic_kernel(t: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    near = (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0
    far = a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def resample_matrix(in_size: int, out_size: int) -> np.ndarray:
    """
    Матрица бикубической передискретизации одной оси

    Args:
        in_size: Длина входа
        out_size: Длина выхода

    Returns:
        Матрица (out_size, in_size); строки суммируются в 1
    """
    dst = np.arange(out_size)
    src = (dst + 0.5) * (in_size / out_size) - 0.5
    base = np.floor(src).astype(np.int64)
    matrix = np.zeros((out_size, in_size))
    for tap in range(-1, 3):
        index = base + tap
        weight = _cubic_kernel(src - index)
        np.add.at(matrix, (dst, np.clip(index, 0, in_size - 1)), weight)
    return matrix


def bicubic_resample(img: np.ndarray, out_h: int, out_w: int, clip: bool = True) -> np.ndarray:
    """
    Бикубическая передискретизация (a = -0.5, центры пикселей, прижатие краев)

    Args:
        img: Изображение (H, W)
        out_h: Высота выхода
        out_w: Ширина выхода
        clip: Обрезать результат в [0, 1]

    Returns:
        Изображение (out_h, out_w)
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"Размер выхода должен быть положительным: {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float64)
    rows = resample_matrix(img.shape[0], out_h)
    cols = resample_matrix(img.shape[1], out_w)
    out = rows @ img @ cols.T
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def _correlate3x3(padded: np.ndarray, kernel: np.ndarray, height: int, width: int) -> np.ndarray:
    out = np.zeros((height, width))
    for di in range(3):
        for dj in range(3):
            if kernel[di, dj] != 0.0:
                out += kernel[di, dj] * padded[di:di + height, dj:dj + width]
    return out


def gradients(img: np.ndarray) -> GradientStack:
    """
    Собель по x и y и 4-связный лапласиан с повтором краевых пикселей

    Args:
        img: Изображение (H, W), не меньше 3x3

    Returns:
        GradientStack той же формы
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or not validate_image_size(*img.shape):
        raise ValueError(f"Для градиентов нужно изображение не меньше 3x3, получено {img.shape}")
    height, width = img.shape
    padded = np.pad(img, 1, mode="edge")
    return GradientStack(
        gx=_correlate3x3(padded, SOBEL_X, height, width),
        gy=_correlate3x3(padded, SOBEL_Y, height, width),
        lap=_correlate3x3(padded, LAPLACIAN, height, width),
    )


def coord_axis(n: int) -> np.ndarray:
    """Центры n ячеек отрезка [-1, 1]"""
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def make_coord_grid(h: int, w: int) -> np.ndarray:
    """
    Сетка центров ячеек, нормированная в (-1, 1)

    Args:
        h: Число строк
        w: Число столбцов

    Returns:
        Массив (h, w, 2) с парами (y, x)
    """
    if h < 1 or w < 1:
        raise ValueError(f"Размер сетки должен быть положительным: {h}x{w}")
    ys, xs = np.meshgrid(coord_axis(h), coord_axis(w), indexing="ij")
    return np.stack([ys, xs], axis=-1)


def sample_patch_pair(hr: np.ndarray, s: float, lr_size: int, rng: np.random.Generator) -> PatchPair:
    """
    Выборка обучающей пары по протоколу случайного масштаба

    Из HR вырезается квадрат round(s * lr_size), он уменьшается бикубически
    до lr_size x lr_size, а из кропа без возвращения выбираются lr_size^2
    пикселей эталона с нормированными координатами внутри кропа.

    Args:
        hr: HR-изображение
        s: Масштаб (>= 1)
        lr_size: Сторона LR-патча
        rng: Источник случайности

    Returns:
        PatchPair

    Raises:
        DataError: HR-изображение меньше нужного кропа
    """
    if s < 1.0:
        raise ValueError(f"Масштаб должен быть не меньше 1: {s}")
    crop = scaled_size(lr_size, s)
    height, width = hr.shape
    if height < crop or width < crop:
        raise DataError(
            f"HR-изображение {height}x{width} меньше кропа {crop}x{crop} для масштаба {s:g}"
        )
    y0 = int(rng.integers(0, height - crop + 1))
    x0 = int(rng.integers(0, width - crop + 1))
    region = hr[y0:y0 + crop, x0:x0 + crop]
    lr = bicubic_resample(region, lr_size, lr_size)

    count = lr_size * lr_size
    picked = rng.choice(crop * crop, size=count, replace=False)
    coords = make_coord_grid(crop, crop).reshape(-1, 2)[picked]
    values = region.reshape(-1)[picked]
    return PatchPair(lr=lr, scale=float(s), gt_coords=coords, gt_values=values.copy())
