#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Проверка аналитических градиентов центральными разностями (float64, шаг 1e-4).

Для каждого параметрического тензора блока сравниваются градиент autograd
и численная производная скалярной функции потерь по не более чем
max_elements случайно выбранным элементам:

    rel = max|g_a - g_n| / max(max|g_a|, max|g_n|, 1e-6)
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from anytsr.core.encoder import SS2D, ScaleAdaptiveMapping, ScaleSpecificBlock, ScaleSpecificEncoder
from anytsr.core.errors import GradcheckError
from anytsr.core.model import AnyTSR
from anytsr.core.upsampler import AnyScaleUpsampler
from anytsr.utils.imaging import make_coord_grid

logger = logging.getLogger(__name__)

STEP = 1e-4
TOLERANCE = 1e-3
DENOMINATOR_FLOOR = 1e-6
DEFAULT_MAX_ELEMENTS = 6

# ширина каналов проверяемых блоков по пресету
PRESET_CHANNELS = {"tiny": 4, "full": 8}

LossFn = Callable[[], torch.Tensor]
# (модуль, функция потерь, префиксы проверяемых параметров или None для всех)
BlockCase = Tuple[nn.Module, LossFn, Optional[Tuple[str, ...]]]


@dataclass
class TensorCheck:
    """Результат проверки одного тензора"""
    name: str
    numel: int
    checked: int
    max_rel_error: float


@dataclass
class BlockResult:
    """Результат проверки блока"""
    block: str
    tensors: List[TensorCheck] = field(default_factory=list)
    tolerance: float = TOLERANCE
    unused: List[str] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.tensors) and not self.unused and self.max_rel_error < self.tolerance


def _random(generator: torch.Generator, *shape) -> torch.Tensor:
    return torch.randn(*shape, generator=generator, dtype=torch.float64)


def _projection_loss(output_fn: Callable[[], torch.Tensor], weights: torch.Tensor) -> LossFn:
    return lambda: (output_fn() * weights).sum()


def _grid_queries(h: int, w: int) -> torch.Tensor:
    return torch.as_tensor(make_coord_grid(h, w), dtype=torch.float64).reshape(1, -1, 2)


def build_ssb(channels: int, generator: torch.Generator) -> BlockCase:
    block = ScaleSpecificBlock(channels, d_state=2).double()
    x = _random(generator, 1, 6, 6, channels)
    s = torch.tensor([[2.0]], dtype=torch.float64)
    weights = _random(generator, 1, 6, 6, channels)
    return block, _projection_loss(lambda: block(x, s), weights), None


def build_ss2d(channels: int, generator: torch.Generator) -> BlockCase:
    scan = SS2D(channels, d_state=2, scan_mode="parallel").double()
    x = _random(generator, 1, 4, 5, channels)
    weights = _random(generator, 1, 4, 5, channels)
    return scan, _projection_loss(lambda: scan(x), weights), None


def build_sam(channels: int, generator: torch.Generator) -> BlockCase:
    sam = ScaleAdaptiveMapping(channels, bank_size=3, hidden=8).double()
    x = _random(generator, 1, 5, 5, channels)
    s = torch.tensor([[2.37]], dtype=torch.float64)
    weights = _random(generator, 1, 5, 5, channels)
    return sam, _projection_loss(lambda: sam(x, s), weights), None


def build_encoder(channels: int, generator: torch.Generator) -> BlockCase:
    encoder = ScaleSpecificEncoder(channels=channels, layers=1, blocks=1, bank_size=2, d_state=2, sam_hidden=8).double()
    img = torch.rand(1, 1, 6, 6, generator=generator, dtype=torch.float64)
    weights = _random(generator, 1, 6, 6, channels)
    return encoder, _projection_loss(lambda: encoder(img, 1.7), weights), None


def _upsampler_case(channels: int, generator: torch.Generator, prefixes: Tuple[str, ...]) -> BlockCase:
    upsampler = AnyScaleUpsampler(channels, neo_width=8, neo_iterations=2, neo_heads=2, sigma_init=0.8).double()
    E_lr = _random(generator, 1, 3, 3, channels)
    coords = _grid_queries(4, 4)
    s = torch.tensor([[4.0 / 3.0]], dtype=torch.float64)
    weights = _random(generator, 1, 16)
    return upsampler, _projection_loss(lambda: upsampler(E_lr, coords, s), weights), prefixes


def build_lle(channels: int, generator: torch.Generator) -> BlockCase:
    return _upsampler_case(channels, generator, ("log_sigma",))


def build_orm(channels: int, generator: torch.Generator) -> BlockCase:
    return _upsampler_case(channels, generator, ("orm.",))


def build_neo(channels: int, generator: torch.Generator) -> BlockCase:
    return _upsampler_case(channels, generator, ("neo.",))


def build_model_l1(channels: int, generator: torch.Generator) -> BlockCase:
    encoder = ScaleSpecificEncoder(channels=channels, layers=1, blocks=1, bank_size=2, d_state=2, sam_hidden=8)
    upsampler = AnyScaleUpsampler(channels, neo_width=8, neo_iterations=1, neo_heads=2)
    model = AnyTSR(encoder, upsampler).double()
    img = torch.rand(1, 1, 5, 5, generator=generator, dtype=torch.float64)
    coords = _grid_queries(8, 8)
    target = torch.rand(1, 64, generator=generator, dtype=torch.float64)

    def loss() -> torch.Tensor:
        return (model(img, coords, 1.6) - target).abs().mean()

    return model, loss, None


BLOCK_BUILDERS: Dict[str, Callable[[int, torch.Generator], BlockCase]] = {
    "ssb": build_ssb,
    "ss2d": build_ss2d,
    "sam": build_sam,
    "encoder": build_encoder,
    "lle": build_lle,
    "orm": build_orm,
    "neo": build_neo,
    "upsampler": build_model_l1,
}


def check_tensor(name: str, param: torch.Tensor, analytic: torch.Tensor, loss_fn: LossFn,
                 rng: np.random.Generator, max_elements: int, step: float = STEP) -> TensorCheck:
    """
    Сравнение градиента одного тензора с центральными разностями

    Args:
        name: Имя тензора
        param: Параметр (float64)
        analytic: Градиент autograd
        loss_fn: Скалярная функция потерь
        rng: Генератор выбора элементов
        max_elements: Предел числа проверяемых элементов
    """
    flat = param.data.view(-1)
    count = min(max_elements, flat.numel())
    indexes = rng.choice(flat.numel(), size=count, replace=False)
    numeric = np.zeros(count)
    with torch.no_grad():
        for k, index in enumerate(indexes):
            original = flat[index].item()
            flat[index] = original + step
            plus = loss_fn().item()
            flat[index] = original - step
            minus = loss_fn().item()
            flat[index] = original
            numeric[k] = (plus - minus) / (2.0 * step)
    exact = analytic.detach().reshape(-1)[torch.as_tensor(indexes)].cpu().numpy()
    scale = max(float(np.abs(exact).max()), float(np.abs(numeric).max()), DENOMINATOR_FLOOR)
    return TensorCheck(
        name=name,
        numel=flat.numel(),
        checked=count,
        max_rel_error=float(np.abs(exact - numeric).max() / scale),
    )


def check_block(block: str, case: BlockCase, rng: np.random.Generator,
                max_elements: int = DEFAULT_MAX_ELEMENTS, tolerance: float = TOLERANCE) -> BlockResult:
    """Проверка всех параметров блока, отобранных префиксами"""
    module, loss_fn, prefixes = case
    named = [
        (name, p) for name, p in module.named_parameters()
        if p.requires_grad and (prefixes is None or name.startswith(prefixes))
    ]
    module.zero_grad(set_to_none=True)
    grads = torch.autograd.grad(loss_fn(), [p for _, p in named], allow_unused=True)
    result = BlockResult(block=block, tolerance=tolerance)
    for (name, param), grad in zip(named, grads):
        if grad is None:
            logger.warning("Блок %s: параметр %s не участвует в потере", block, name)
            result.unused.append(name)
            continue
        result.tensors.append(check_tensor(name, param, grad, loss_fn, rng, max_elements))
    logger.info("Блок %s: %d тензоров, макс. отн. ошибка %.3e", block, len(result.tensors), result.max_rel_error)
    return result


def run_gradcheck(blocks: Optional[Sequence[str]] = None, preset: str = "tiny", seed: int = 0,
                  max_elements: int = DEFAULT_MAX_ELEMENTS, tolerance: float = TOLERANCE) -> List[BlockResult]:
    """
    Проверка градиентов перечисленных блоков

    Args:
        blocks: Имена блоков из BLOCK_BUILDERS (по умолчанию все)
        preset: tiny или full (ширина каналов)
        seed: Сид входов, весов и выбора элементов

    Returns:
        Результаты по блокам
    """
    if preset not in PRESET_CHANNELS:
        raise ValueError(f"Неизвестный пресет: {preset}")
    names = list(blocks) if blocks else list(BLOCK_BUILDERS)
    unknown = [name for name in names if name not in BLOCK_BUILDERS]
    if unknown:
        raise ValueError(f"Неизвестные блоки: {unknown}")
    rng = np.random.default_rng(seed)
    results = []
    for index, name in enumerate(names):
        torch.manual_seed(seed + index)
        generator = torch.Generator().manual_seed(seed + index)
        case = BLOCK_BUILDERS[name](PRESET_CHANNELS[preset], generator)
        results.append(check_block(name, case, rng, max_elements, tolerance))
    return results


def format_results(results: Sequence[BlockResult]) -> str:
    """Отчет: строка на тензор и итог по блоку"""
    lines = []
    for result in results:
        status = "OK" if result.passed else "FAIL"
        lines.append(f"[{status}] {result.block}: {len(result.tensors)} тензоров, "
                     f"макс. отн. ошибка {result.max_rel_error:.3e}")
        for name in result.unused:
            lines.append(f"    {name:<48} не получает градиента")
        for tensor in result.tensors:
            lines.append(f"    {tensor.name:<48} {tensor.checked:>3}/{tensor.numel:<6} {tensor.max_rel_error:.3e}")
    return "\n".join(lines)


def ensure_passed(results: Sequence[BlockResult]) -> None:
    """
    Raises:
        GradcheckError: Хотя бы один блок не прошел проверку
    """
    failed = [result.block for result in results if not result.passed]
    if failed:
        raise GradcheckError(failed)
