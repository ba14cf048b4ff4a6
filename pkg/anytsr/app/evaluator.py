#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Оценка: уменьшение HR в s раз, сверхразрешение, PSNR против исходника,
бикубическая базовая линия, развертка по масштабам и многошаговый синтез.
"""

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from anytsr.core.errors import DataError
from anytsr.core.model import AnyTSR
from anytsr.utils.helpers import format_chain, scaled_size, validate_scale
from anytsr.utils.imaging import bicubic_resample, save_image

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
MAX_OUTPUT_PIXELS = 4096 * 4096
MIN_LR_CONTENT = 8

CSV_COLUMNS = ["scale", "ood", "image", "psnr_model", "psnr_bicubic"]
MULTISTEP_COLUMNS = ["chain", "psnr_mean"]

Metric = Callable[[np.ndarray, np.ndarray], float]
NamedImages = Sequence[Tuple[str, np.ndarray]]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0, crop_border: int = 0) -> float:
    """
    Пиковое отношение сигнал/шум, дБ

    Args:
        a: Изображение
        b: Изображение той же формы
        peak: Максимальное значение сигнала
        crop_border: Отбросить столько пикселей у каждого края

    Returns:
        10 * log10(peak^2 / MSE); inf для совпадающих изображений

    Raises:
        ValueError: Формы не совпадают или обрезка не оставляет пикселей
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Формы изображений не совпадают: {a.shape} и {b.shape}")
    if crop_border > 0:
        if 2 * crop_border >= min(a.shape[:2]):
            raise ValueError(f"Обрезка {crop_border} не оставляет пикселей изображения {a.shape}")
        a = a[crop_border:-crop_border, crop_border:-crop_border]
        b = b[crop_border:-crop_border, crop_border:-crop_border]
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def cap_psnr(value: float) -> float:
    return min(value, PSNR_CAP)


@dataclass
class ImageScore:
    """Оценки одного изображения"""
    image: str
    psnr_model: float
    psnr_bicubic: float
    extras: Dict[str, float] = field(default_factory=dict)

    @property
    def saturated(self) -> bool:
        return math.isinf(self.psnr_model) or math.isinf(self.psnr_bicubic)


@dataclass
class EvalRow:
    """Строка отчета: один масштаб на одном тестовом наборе"""
    scale: float
    ood: bool
    scores: List[ImageScore]
    set_name: str = ""

    @property
    def psnr_model(self) -> float:
        return float(np.mean([cap_psnr(s.psnr_model) for s in self.scores])) if self.scores else math.nan

    @property
    def psnr_bicubic(self) -> float:
        return float(np.mean([cap_psnr(s.psnr_bicubic) for s in self.scores])) if self.scores else math.nan

    @property
    def psnr_std(self) -> float:
        return float(np.std([cap_psnr(s.psnr_model) for s in self.scores])) if self.scores else math.nan

    @property
    def saturated(self) -> bool:
        return any(s.saturated for s in self.scores)


@dataclass
class MultiStepRow:
    """Итог одной цепочки синтеза"""
    chain: List[float]
    scores: List[ImageScore]
    set_name: str = ""

    @property
    def label(self) -> str:
        return format_chain(self.chain)

    @property
    def psnr_mean(self) -> float:
        return float(np.mean([cap_psnr(s.psnr_model) for s in self.scores])) if self.scores else math.nan


def _fmt(value: float) -> str:
    return f"{cap_psnr(value):.4f}"


@dataclass
class EvalReport:
    """Отчет оценки"""
    rows: List[EvalRow] = field(default_factory=list)
    multistep: List[MultiStepRow] = field(default_factory=list)
    model_name: str = ""
    flags: Dict[str, bool] = field(default_factory=dict)
    metric_names: List[str] = field(default_factory=list)

    def set_names(self) -> List[str]:
        names: List[str] = []
        for row in list(self.rows) + list(self.multistep):
            if row.set_name not in names:
                names.append(row.set_name)
        return names

    def csv_text(self) -> str:
        """CSV построчно по изображениям; столбец set только при нескольких наборах"""
        with_set = len(self.set_names()) > 1
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow((["set"] if with_set else []) + CSV_COLUMNS + self.metric_names)
        for row in self.rows:
            for score in row.scores:
                values = [f"{row.scale:g}", int(row.ood), score.image, _fmt(score.psnr_model), _fmt(score.psnr_bicubic)]
                values += [f"{score.extras.get(name, math.nan):.6g}" for name in self.metric_names]
                writer.writerow(([row.set_name] if with_set else []) + values)
        return buffer.getvalue()

    def multistep_csv_text(self) -> str:
        with_set = len(self.set_names()) > 1
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow((["set"] if with_set else []) + MULTISTEP_COLUMNS)
        for row in self.multistep:
            writer.writerow(([row.set_name] if with_set else []) + [row.label, _fmt(row.psnr_mean)])
        return buffer.getvalue()

    def write_csv(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.csv_text())

    def write_multistep_csv(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.multistep_csv_text())

    def trend_note(self) -> str:
        """Убывает ли PSNR модели с ростом масштаба (только сообщается)"""
        notes = []
        for name in self.set_names():
            rows = sorted((r for r in self.rows if r.set_name == name), key=lambda r: r.scale)
            if len(rows) < 2:
                continue
            values = [r.psnr_model for r in rows]
            monotone = all(b <= a for a, b in zip(values, values[1:]))
            prefix = f"[{name}] " if name else ""
            if monotone:
                notes.append(f"{prefix}PSNR модели монотонно убывает с масштабом")
            else:
                notes.append(f"{prefix}PSNR модели убывает с масштабом немонотонно")
        return "\n".join(notes)

    def format_table(self) -> str:
        """Текстовая таблица: средние по масштабам и цепочкам"""
        lines = []
        if self.model_name:
            lines.append(f"Модель: {self.model_name}")
        if self.flags:
            lines.append("Переключатели: " + ", ".join(f"{k}={'on' if v else 'off'}" for k, v in self.flags.items()))
        if self.rows:
            lines.append(f"{'набор':<10} {'масштаб':>8} {'модель, дБ':>12} {'бикубика, дБ':>13} {'std':>7}")
            for row in self.rows:
                lines.append(
                    f"{row.set_name or '-':<10} {row.scale:>7g}{'*' if row.ood else ' '} "
                    f"{row.psnr_model:>12.4f} {row.psnr_bicubic:>13.4f} {row.psnr_std:>7.3f}"
                    f"{' (насыщение)' if row.saturated else ''}"
                )
            if any(row.ood for row in self.rows):
                lines.append("* масштаб вне обучающего диапазона")
            note = self.trend_note()
            if note:
                lines.append(note)
        if self.multistep:
            lines.append(f"{'набор':<10} {'цепочка':<16} {'шагов':>5} {'PSNR, дБ':>10}")
            for row in self.multistep:
                lines.append(
                    f"{row.set_name or '-':<10} {row.label:<16} {len(row.chain):>5} {row.psnr_mean:>10.4f}"
                )
            lines.append("Цепочки сохраняют итоговый масштаб: произведение шагов равно целевому")
        return "\n".join(lines)


class Evaluator:
    """Протокол тестирования модели"""

    def __init__(self, model: AnyTSR, train_scale_max: float = 4.0, crop_border: int = 0,
                 metrics: Optional[Dict[str, Metric]] = None, dump_dir: Optional[str] = None,
                 model_name: str = ""):
        self.model = model
        self.train_scale_max = train_scale_max
        self.crop_border = crop_border
        self.metrics = dict(metrics or {})
        self.dump_dir = dump_dir
        self.model_name = model_name

    def new_report(self) -> EvalReport:
        flags = {
            "ssb_scale": self.model.encoder.layers[0].blocks[0].use_scale_term if self.model.encoder.layers else False,
            "sam": any(layer.sam is not None for layer in self.model.encoder.layers),
            "lle": self.model.upsampler.use_lle,
            "orm": self.model.upsampler.use_orm,
        }
        return EvalReport(model_name=self.model_name, flags=flags, metric_names=list(self.metrics))

    @staticmethod
    def degrade(hr: np.ndarray, scale: float) -> np.ndarray:
        """LR = bicubic(HR, round(H/s), round(W/s))"""
        height, width = hr.shape
        return bicubic_resample(hr, scaled_size(height, 1.0 / scale), scaled_size(width, 1.0 / scale))

    def _check_size(self, name: str, hr: np.ndarray, scale: float) -> None:
        if min(hr.shape) < MIN_LR_CONTENT * scale:
            raise DataError(
                f"Изображение {name} {hr.shape[0]}x{hr.shape[1]} слишком мало для масштаба {scale:g} "
                f"(нужно не меньше {MIN_LR_CONTENT * scale:g})"
            )

    def _score(self, name: str, sr: np.ndarray, baseline: np.ndarray, hr: np.ndarray) -> ImageScore:
        extras = {metric: float(fn(sr, hr)) for metric, fn in self.metrics.items()}
        return ImageScore(
            image=name,
            psnr_model=psnr(sr, hr, crop_border=self.crop_border),
            psnr_bicubic=psnr(baseline, hr, crop_border=self.crop_border),
            extras=extras,
        )

    def _dump(self, set_name: str, name: str, tag: str, sr: np.ndarray) -> None:
        if not self.dump_dir:
            return
        stem = os.path.splitext(name)[0]
        save_image(os.path.join(self.dump_dir, set_name or "test", f"{stem}_{tag}.png"), sr, bit_depth=16)

    def _run_chain(self, hr: np.ndarray, chain: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        total = float(np.prod(chain))
        lr = self.degrade(hr, total)
        current = lr
        for index, step in enumerate(chain):
            if index == len(chain) - 1:
                out_h, out_w = hr.shape
            else:
                out_h, out_w = scaled_size(current.shape[0], step), scaled_size(current.shape[1], step)
            if out_h * out_w > MAX_OUTPUT_PIXELS:
                raise DataError(f"Промежуточный выход {out_h}x{out_w} превышает 4096x4096")
            current = self.model.super_resolve(current, step, out_h, out_w)
        return lr, current

    def eval_scale(self, images: NamedImages, scale: float, set_name: str = "") -> EvalRow:
        """
        Оценка на одном масштабе

        Args:
            images: Пары (имя, HR-изображение)
            scale: Масштаб s
            set_name: Имя тестового набора

        Returns:
            EvalRow с PSNR модели и бикубики по каждому изображению
        """
        if not validate_scale(scale):
            raise ValueError(f"Масштаб должен быть конечным и не меньше 1: {scale}")
        scores = []
        for name, hr in images:
            self._check_size(name, hr, scale)
            lr, sr = self._run_chain(hr, [scale])
            baseline = bicubic_resample(lr, *hr.shape)
            scores.append(self._score(name, sr, baseline, hr))
            self._dump(set_name, name, f"x{scale:g}", sr)
        row = EvalRow(scale=float(scale), ood=scale > self.train_scale_max, scores=scores, set_name=set_name)
        logger.info("Масштаб %g: модель %.4f дБ, бикубика %.4f дБ", scale, row.psnr_model, row.psnr_bicubic)
        return row

    def multi_step_synthesis(self, images: NamedImages, chain: Sequence[float], set_name: str = "") -> MultiStepRow:
        """
        Многошаговый синтез: каждый шаг увеличивает результат предыдущего

        Args:
            images: Пары (имя, HR-изображение)
            chain: Масштабы шагов, произведение равно итоговому масштабу

        Raises:
            ValueError: Пустая цепочка или шаг меньше 1
            DataError: Промежуточный выход больше 4096x4096
        """
        chain = [float(step) for step in chain]
        if not chain:
            raise ValueError("Цепочка синтеза пуста")
        for step in chain:
            if not validate_scale(step):
                raise ValueError(f"Шаг цепочки должен быть конечным и не меньше 1: {step}")
        total = float(np.prod(chain))
        scores = []
        for name, hr in images:
            self._check_size(name, hr, total)
            lr, sr = self._run_chain(hr, chain)
            baseline = bicubic_resample(lr, *hr.shape)
            scores.append(self._score(name, sr, baseline, hr))
        row = MultiStepRow(chain=chain, scores=scores, set_name=set_name)
        logger.info("Цепочка %s: %.4f дБ", row.label, row.psnr_mean)
        return row

    def sweep(self, images: NamedImages, scales: Sequence[float], set_name: str = "",
              report: Optional[EvalReport] = None) -> EvalReport:
        """Оценка по списку масштабов; масштабы выше обучающего максимума помечаются OOD"""
        report = report or self.new_report()
        for scale in scales:
            report.rows.append(self.eval_scale(images, scale, set_name))
        return report

    def evaluate_sets(self, sets: Dict[str, NamedImages], scales: Sequence[float] = (),
                      chains: Sequence[Sequence[float]] = ()) -> EvalReport:
        """Развертка и цепочки по нескольким тестовым наборам"""
        report = self.new_report()
        for set_name, images in sets.items():
            self.sweep(images, scales, set_name, report)
            for chain in chains:
                report.multistep.append(self.multi_step_synthesis(images, chain, set_name))
        return report
