#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""График PSNR от масштаба (matplotlib подключается только при вызове)"""

import logging
import os

from anytsr.app.evaluator import EvalReport

logger = logging.getLogger(__name__)


def plot_sweep(report: EvalReport, path: str, train_scale_max: float = 4.0) -> str:
    """
    Сохранение графика PSNR модели и бикубики по масштабам

    Args:
        report: Отчет с развёрткой по масштабам
        path: Путь к файлу изображения
        train_scale_max: Граница обучающего диапазона (правее затеняется)

    Returns:
        Путь к файлу
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    try:
        for name in report.set_names():
            rows = sorted((r for r in report.rows if r.set_name == name), key=lambda r: r.scale)
            if not rows:
                continue
            scales = [r.scale for r in rows]
            suffix = f" ({name})" if name else ""
            ax.plot(scales, [r.psnr_model for r in rows], marker="o", label="AnyTSR" + suffix)
            ax.plot(scales, [r.psnr_bicubic for r in rows], marker="s", linestyle="--", label="Bicubic" + suffix)
        if any(r.ood for r in report.rows):
            right = max(r.scale for r in report.rows)
            ax.axvspan(train_scale_max, right, color="grey", alpha=0.15, label="вне обучения")
        ax.set_xlabel("масштаб")
        ax.set_ylabel("PSNR, дБ")
        ax.grid(True, alpha=0.3)
        ax.legend()
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    logger.info("График сохранен: %s", path)
    return path
