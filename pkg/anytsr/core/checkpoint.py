#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Контрольные точки обучения.

Формат файла (little-endian):
    b"ATSR"                       магия
    u32                           версия формата
    u32 + UTF-8                   метаданные JSON (конфигурация, эпоха, шаг, состояние ГСЧ)
    u32                           число тензоров
    таблица: u16 + имя, u32 ранг, u32 x ранг размеры, u32 код типа, u64 смещение
    данные: float32 подряд, смещения отсчитываются от начала блока данных
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict, Optional

import numpy as np
import torch

from anytsr.core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"ATSR"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
OPTIMIZER_PREFIX = "optimizer."
_ADAM_STATE = ("exp_avg", "exp_avg_sq", "step")


@dataclass
class Checkpoint:
    """Содержимое контрольной точки"""
    tensors: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def epoch(self) -> int:
        return int(self.metadata.get("epoch", 0))

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", 0))

    @property
    def config(self) -> Dict[str, Any]:
        return self.metadata.get("config", {})

    @property
    def rng_state(self) -> Optional[Dict[str, Any]]:
        return self.metadata.get("rng")

    def model_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPTIMIZER_PREFIX)}

    def optimizer_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(OPTIMIZER_PREFIX)}


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError(f"файл обрезан: не удалось прочитать {what}")
    return data


def _unpack(fmt: str, stream: BinaryIO, what: str):
    return struct.unpack(fmt, _read_exact(stream, struct.calcsize(fmt), what))


class CheckpointManager:
    """Менеджер контрольных точек: именованные тензоры модели и оптимизатора"""

    def __init__(self):
        self.last_path: Optional[str] = None

    def collect(self, model: torch.nn.Module, optimizer: Optional[torch.optim.Optimizer] = None) -> Dict[str, np.ndarray]:
        """
        Именованные тензоры модели и состояния Adam

        Returns:
            Словарь имя -> массив float32
        """
        tensors = {name: p.detach().cpu().numpy().astype(np.float32) for name, p in model.state_dict().items()}
        if optimizer is not None:
            names = {id(p): name for name, p in model.named_parameters()}
            for group in optimizer.param_groups:
                for param in group["params"]:
                    state = optimizer.state.get(param)
                    if not state:
                        continue
                    name = names[id(param)]
                    for key in _ADAM_STATE:
                        value = torch.as_tensor(state[key]).detach().cpu().numpy()
                        tensors[f"{OPTIMIZER_PREFIX}{name}.{key}"] = value.astype(np.float32)
        return tensors

    def save(self, path: str, model: torch.nn.Module, optimizer: Optional[torch.optim.Optimizer] = None,
             metadata: Optional[Dict[str, Any]] = None) -> str:
        """
        Сохранение контрольной точки; существующий файл переименовывается в .backup

        Args:
            path: Путь к файлу
            model: Модель
            optimizer: Оптимизатор Adam (необязательно)
            metadata: Конфигурация, эпоха, шаг, состояние ГСЧ

        Returns:
            Путь к записанному файлу
        """
        return self.write(path, Checkpoint(self.collect(model, optimizer), dict(metadata or {})))

    def write(self, path: str, checkpoint: Checkpoint) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        text = json.dumps(checkpoint.metadata, ensure_ascii=False, sort_keys=True).encode("utf-8")
        table = bytearray()
        blobs = []
        offset = 0
        for name, value in checkpoint.tensors.items():
            array = np.ascontiguousarray(value, dtype="<f4")
            encoded = name.encode("utf-8")
            table += struct.pack("<H", len(encoded)) + encoded
            table += struct.pack("<I", array.ndim)
            table += struct.pack(f"<{array.ndim}I", *array.shape)
            table += struct.pack("<IQ", DTYPE_FLOAT32, offset)
            blob = array.tobytes()
            blobs.append(blob)
            offset += len(blob)

        tmp_path = f"{path}.tmp"
        try:
            with open(tmp_path, "wb") as f:
                f.write(MAGIC)
                f.write(struct.pack("<II", FORMAT_VERSION, len(text)))
                f.write(text)
                f.write(struct.pack("<I", len(checkpoint.tensors)))
                f.write(bytes(table))
                for blob in blobs:
                    f.write(blob)
            if os.path.exists(path):
                backup_path = f"{path}.backup"
                if os.path.exists(backup_path):
                    os.remove(backup_path)
                os.rename(path, backup_path)
            os.replace(tmp_path, path)
        except OSError as e:
            raise CheckpointError(f"не удалось записать {path}: {e}")

        self.last_path = path
        logger.info("Контрольная точка сохранена: %s (%d тензоров)", path, len(checkpoint.tensors))
        return path

    def load(self, path: str) -> Checkpoint:
        """
        Чтение контрольной точки

        Raises:
            CheckpointError: Файл не найден, неверная магия или версия, файл обрезан
        """
        if not os.path.exists(path):
            raise CheckpointError(f"файл не найден: {path}")
        with open(path, "rb") as f:
            magic = f.read(len(MAGIC))
            if magic != MAGIC:
                raise CheckpointError(f"неверная сигнатура файла {path}: {magic!r}")
            version, text_length = _unpack("<II", f, "заголовок")
            if version != FORMAT_VERSION:
                raise CheckpointError(f"неподдерживаемая версия формата {version} (ожидалась {FORMAT_VERSION})")
            try:
                metadata = json.loads(_read_exact(f, text_length, "метаданные").decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise CheckpointError(f"повреждены метаданные {path}: {e}")

            (count,) = _unpack("<I", f, "число тензоров")
            entries = []
            for _ in range(count):
                (name_length,) = _unpack("<H", f, "длину имени")
                name = _read_exact(f, name_length, "имя тензора").decode("utf-8")
                (rank,) = _unpack("<I", f, f"ранг {name}")
                shape = _unpack(f"<{rank}I", f, f"размеры {name}") if rank else ()
                dtype_code, offset = _unpack("<IQ", f, f"тип {name}")
                if dtype_code != DTYPE_FLOAT32:
                    raise CheckpointError(f"неизвестный код типа {dtype_code} у {name}")
                entries.append((name, tuple(shape), offset))

            data = f.read()

        tensors: Dict[str, np.ndarray] = {}
        for name, shape, offset in entries:
            if name in tensors:
                raise CheckpointError(f"повторяющееся имя тензора: {name}")
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if offset + size > len(data):
                raise CheckpointError(f"файл обрезан: данные тензора {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=offset).reshape(shape).copy()

        logger.info("Контрольная точка загружена: %s (%d тензоров)", path, len(tensors))
        self.last_path = path
        return Checkpoint(tensors=tensors, metadata=metadata, version=version)

    def apply_to_model(self, checkpoint: Checkpoint, model: torch.nn.Module) -> None:
        """
        Загрузка весов в модель

        Raises:
            CheckpointError: Расхождение имен или форм тензоров
        """
        stored = checkpoint.model_tensors()
        expected = model.state_dict()
        missing = sorted(set(expected) - set(stored))
        unexpected = sorted(set(stored) - set(expected))
        if missing or unexpected:
            raise CheckpointError(
                f"набор тензоров не совпадает с моделью: нет {missing[:5]}, лишние {unexpected[:5]}"
            )
        state = {}
        for name, reference in expected.items():
            value = stored[name]
            if tuple(value.shape) != tuple(reference.shape):
                raise CheckpointError(
                    f"форма {name} {tuple(value.shape)} не совпадает с {tuple(reference.shape)}"
                )
            state[name] = torch.from_numpy(value).to(dtype=reference.dtype, device=reference.device)
        model.load_state_dict(state)

    def apply_to_optimizer(self, checkpoint: Checkpoint, model: torch.nn.Module,
                           optimizer: torch.optim.Optimizer) -> None:
        """Восстановление моментов Adam по именам параметров"""
        stored = checkpoint.optimizer_tensors()
        for name, param in model.named_parameters():
            keys = [f"{OPTIMIZER_PREFIX}{name}.{key}" for key in _ADAM_STATE]
            present = [key in stored for key in keys]
            if not any(present):
                continue
            if not all(present):
                raise CheckpointError(f"неполное состояние оптимизатора для {name}")
            exp_avg, exp_avg_sq, step = (stored[key] for key in keys)
            if exp_avg.shape != tuple(param.shape) or exp_avg_sq.shape != tuple(param.shape):
                raise CheckpointError(f"форма состояния оптимизатора {name} не совпадает с параметром")
            optimizer.state[param] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.from_numpy(exp_avg).to(dtype=param.dtype, device=param.device),
                "exp_avg_sq": torch.from_numpy(exp_avg_sq).to(dtype=param.dtype, device=param.device),
            }
