#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Конфигурация запуска.

Текстовый файл "ключ = значение", комментарии начинаются с "#".
Все ключи лежат в одном пространстве имен: поля EncoderConfig,
UpsamplerConfig, TrainConfig и пути RunConfig. Порядок применения:
умолчания < preset < ablation < файл < флаги командной строки.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

from anytsr.core.errors import ConfigError
from anytsr.core.selective_scan import SCAN_MODES

logger = logging.getLogger(__name__)

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


@dataclass
class EncoderConfig:
    """Параметры кодировщика: N слоев, M блоков, c каналов, банк SAM из n ядер"""
    layers: int = 2
    blocks: int = 2
    channels: int = 32
    bank_size: int = 2
    d_state: int = 8
    ssm_ratio: float = 1.0
    sam_hidden: int = 64
    use_ssb_scale_term: bool = True
    use_sam: bool = True
    use_gradient_branch: bool = True
    scan_mode: str = "sequential"
    debug: bool = False


@dataclass
class UpsamplerConfig:
    """Параметры апсемплера"""
    use_lle: bool = True
    use_orm: bool = True
    per_corner_sigma: bool = False
    sigma_init: float = 1.0
    attn_scaled: bool = True
    orm_window: int = 0
    neo_width: int = 64
    neo_iterations: int = 2
    neo_heads: int = 4


@dataclass
class TrainConfig:
    """Параметры обучения"""
    lr_size: int = 48
    scale_range: Tuple[float, float] = (1.0, 4.0)
    batch: int = 16
    epochs: int = 100
    repeats_per_image: int = 20
    lr_init: float = 4e-5
    lr_max: float = 4e-4
    warmup_epochs: int = 20
    seed: int = 0
    grad_clip: float = 0.0
    checkpoint_every: int = 1
    log_every: int = 10
    max_steps: int = 0
    workers: int = 1
    deterministic: bool = False


PRESETS: Dict[str, Dict[str, Any]] = {
    "tiny": {"layers": 2, "blocks": 2, "channels": 32, "bank_size": 2},
    "full": {"layers": 4, "blocks": 4, "channels": 64, "bank_size": 4},
}

# Каждая абляция выключает ровно один переключатель
ABLATIONS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "no_ssb_scale": {"use_ssb_scale_term": False},
    "no_sam": {"use_sam": False},
    "no_lle": {"use_lle": False},
    "no_orm": {"use_orm": False},
}

_SECTIONS = ("encoder", "upsampler", "train")
_RUN_KEYS = ("preset", "ablation", "data", "out")


@dataclass
class RunConfig:
    """Полная конфигурация запуска"""
    preset: str = "tiny"
    ablation: str = "full"
    data: str = ""
    out: str = "runs/default"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    upsampler: UpsamplerConfig = field(default_factory=UpsamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def _locate(self, key: str) -> Tuple[Any, dataclasses.Field]:
        for section in _SECTIONS:
            target = getattr(self, section)
            for f in dataclasses.fields(target):
                if f.name == key:
                    return target, f
        if key in _RUN_KEYS:
            return self, next(f for f in dataclasses.fields(self) if f.name == key)
        raise ConfigError(f"неизвестный ключ конфигурации: {key}")

    def set(self, key: str, value: Any) -> None:
        """
        Установка значения по плоскому ключу

        Args:
            key: Имя поля любой секции
            value: Строка (приводится к типу поля) или готовое значение

        Raises:
            ConfigError: Неизвестный ключ или неверное значение
        """
        target, f = self._locate(key)
        setattr(target, key, coerce_value(key, value, f.type) if isinstance(value, str) else value)

    def get(self, key: str) -> Any:
        target, _ = self._locate(key)
        return getattr(target, key)

    def validate(self) -> None:
        """
        Проверка всех инвариантов до начала работы

        Raises:
            ConfigError: Первое найденное нарушение
        """
        enc, ups, tr = self.encoder, self.upsampler, self.train
        problems: List[str] = []

        if self.preset not in PRESETS:
            problems.append(f"preset должен быть одним из {sorted(PRESETS)}: {self.preset!r}")
        if self.ablation not in ABLATIONS:
            problems.append(f"ablation должен быть одним из {sorted(ABLATIONS)}: {self.ablation!r}")

        for key in ("layers", "blocks", "channels", "bank_size", "d_state", "sam_hidden"):
            if getattr(enc, key) < 1:
                problems.append(f"{key} должен быть >= 1")
        if enc.ssm_ratio <= 0:
            problems.append("ssm_ratio должен быть положительным")
        if enc.scan_mode not in SCAN_MODES:
            problems.append(f"scan_mode должен быть одним из {SCAN_MODES}: {enc.scan_mode!r}")

        if ups.sigma_init <= 0:
            problems.append("sigma_init должен быть положительным")
        if ups.orm_window < 0:
            problems.append("orm_window должен быть >= 0")
        if ups.neo_width < 1 or ups.neo_iterations < 0 or ups.neo_heads < 1:
            problems.append("neo_width, neo_heads должны быть >= 1, neo_iterations >= 0")
        elif ups.neo_width % ups.neo_heads != 0:
            problems.append("neo_width должен делиться на neo_heads")

        low, high = tr.scale_range
        if low < 1.0:
            problems.append(f"минимум scale_range должен быть >= 1: {low}")
        if high < low:
            problems.append(f"scale_range задан в обратном порядке: {low}, {high}")
        if tr.lr_size < 3:
            problems.append("lr_size должен быть >= 3")
        for key in ("batch", "epochs", "repeats_per_image", "checkpoint_every", "log_every", "workers"):
            if getattr(tr, key) < 1:
                problems.append(f"{key} должен быть >= 1")
        if tr.lr_init <= 0 or tr.lr_max <= 0:
            problems.append("lr_init и lr_max должны быть положительными")
        if not 0 <= tr.warmup_epochs < tr.epochs:
            problems.append(f"warmup_epochs должен быть в [0, epochs): {tr.warmup_epochs}")
        if tr.grad_clip < 0:
            problems.append("grad_clip должен быть >= 0")
        if tr.max_steps < 0:
            problems.append("max_steps должен быть >= 0")

        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> Dict[str, Any]:
        """Снимок конфигурации для контрольной точки"""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Восстановление из снимка; неизвестные ключи отклоняются"""
        config = cls()
        for key, value in data.items():
            if key in _SECTIONS:
                for inner, inner_value in value.items():
                    if key == "train" and inner == "scale_range":
                        inner_value = tuple(float(v) for v in inner_value)
                    config.set(inner, inner_value)
            else:
                config.set(key, value)
        return config

    def to_text(self) -> str:
        """Конфигурация в формате файла "ключ = значение" """
        lines = [f"{key} = {getattr(self, key)}" for key in _RUN_KEYS]
        for section in _SECTIONS:
            lines.append("")
            lines.append(f"# {section}")
            for f in dataclasses.fields(getattr(self, section)):
                lines.append(f"{f.name} = {format_value(getattr(getattr(self, section), f.name))}")
        return "\n".join(lines) + "\n"


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(f"{v:g}" for v in value)
    return str(value)


def coerce_value(key: str, text: str, kind: Any) -> Any:
    """
    Приведение строкового значения к типу поля

    Raises:
        ConfigError: Значение не приводится к типу
    """
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == Tuple[float, float]:
            parts = [float(p) for p in text.replace(" ", "").split(",")]
            if len(parts) != 2:
                raise ValueError(text)
            return parts[0], parts[1]
    except ValueError:
        raise ConfigError(f"неверное значение {key} = {text!r}")
    return text


def parse_config_text(text: str, source: str = "<text>") -> Dict[str, str]:
    """
    Разбор текста конфигурации

    Args:
        text: Содержимое файла
        source: Имя источника для сообщений об ошибках

    Returns:
        Словарь ключ -> строковое значение в порядке появления

    Raises:
        ConfigError: Строка без "=" или повтор ключа
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: ожидалось 'ключ = значение'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: пустой ключ")
        if key in values:
            raise ConfigError(f"{source}:{number}: повтор ключа {key}")
        values[key] = value
    return values


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """Флаги --set ключ=значение"""
    values: Dict[str, str] = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set ожидает ключ=значение: {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(values: Dict[str, Any]) -> RunConfig:
    """
    Сборка конфигурации: умолчания, пресет, абляция, явные ключи

    Args:
        values: Плоский словарь ключ -> значение (строки или готовые значения)

    Returns:
        Проверенная RunConfig
    """
    config = RunConfig()
    preset = str(values.get("preset", config.preset))
    ablation = str(values.get("ablation", config.ablation))
    if preset not in PRESETS:
        raise ConfigError(f"неизвестный preset: {preset!r}")
    if ablation not in ABLATIONS:
        raise ConfigError(f"неизвестная абляция: {ablation!r}")
    config.preset = preset
    config.ablation = ablation
    for key, value in PRESETS[preset].items():
        config.set(key, value)
    for key, value in ABLATIONS[ablation].items():
        config.set(key, value)
    for key, value in values.items():
        if key in ("preset", "ablation"):
            continue
        config.set(key, value)
    config.validate()
    return config


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Загрузка конфигурации из файла с переопределениями

    Args:
        path: Путь к файлу конфигурации (необязательно)
        overrides: Значения из флагов командной строки

    Raises:
        ConfigError: Файл не найден, неизвестный ключ или нарушен инвариант
    """
    values: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"файл конфигурации не найден: {path}")
        with open(path, "r", encoding="utf-8") as f:
            values.update(parse_config_text(f.read(), source=path))
    values.update(overrides or {})
    config = build_config(values)
    logger.debug("Конфигурация: preset=%s ablation=%s", config.preset, config.ablation)
    return config
