#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Масштабно-независимый апсемплер U.

Для каждого HR-запроса x_q и каждого из четырех угловых соседей (TL, TR, BL, BR):
    1. код соседа копируется без смешивания (подъем ближайшим соседом);
    2. смещение dx = |x_q - x'| и расстояние d;
    3. вес RBF w = exp(-d^2 / (2 sigma^2)), код E = w * E^HR   (LLE);
    4. уточнение смещения E_offset = Softmax(Q K^T) V,
       Q = phi_q(dx), K = phi_k(E), V = phi_v(E)              (ORM).
Затем нейронный оператор (NEO) восстанавливает значение пикселя по
{E_l, E_offset_l, dx_l} четырех углов и масштабу s.

Запросы передаются списком координат (b, q, 2), поэтому одна и та же
процедура декодирует и полную HR-сетку, и произвольное подмножество пикселей.
Расстояния для RBF, входы phi_q и NEO используют смещения в долях LR-ячейки.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from anytsr.utils.helpers import ensure_finite

logger = logging.getLogger(__name__)

CORNERS = ("TL", "TR", "BL", "BR")

# (брать верхний индекс по y, брать верхний индекс по x)
_CORNER_SIDES = {
    "TL": (False, False),
    "TR": (False, True),
    "BL": (True, False),
    "BR": (True, True),
}

INDEX_EPS = 1e-6
ATTENTION_CHUNK = 1024


@dataclass
class LiftedCode:
    """Коды угловых соседей для списка запросов"""
    corner: str
    codes: torch.Tensor           # (b, q, c)
    source_coords: torch.Tensor   # (b, q, 2)
    weighted: Optional[torch.Tensor] = None


@dataclass
class OffsetGrid:
    """Смещения запросов относительно центров соседей"""
    delta: torch.Tensor      # (b, q, 2), нормированные координаты
    rel: torch.Tensor        # (b, q, 2), доли LR-ячейки
    distance: torch.Tensor   # (b, q), норма rel

    @property
    def squared_distance(self) -> torch.Tensor:
        return (self.rel * self.rel).sum(dim=-1)


def continuous_index(coord: torch.Tensor, n: int) -> torch.Tensor:
    """Непрерывный индекс ячейки: центр ячейки i переходит в i"""
    return (coord + 1.0) * n / 2.0 - 0.5


def _neighbor_index(coord: torch.Tensor, n: int, upper: bool) -> torch.Tensor:
    t = continuous_index(coord, n)
    if upper:
        index = torch.ceil(t - INDEX_EPS)
    else:
        index = torch.floor(t + INDEX_EPS)
    return index.clamp(0, n - 1).long()


def lift_corner(E_lr: torch.Tensor, coords: torch.Tensor, corner: str) -> LiftedCode:
    """
    Подъем кодов ближайшим угловым соседом

    Args:
        E_lr: Латентный код (b, h, w, c)
        coords: Координаты запросов (b, q, 2) в порядке (y, x)
        corner: Один из TL, TR, BL, BR

    Returns:
        LiftedCode с точными копиями кодов и центрами соседей
    """
    if corner not in _CORNER_SIDES:
        raise ValueError(f"Неизвестный угол: {corner}")
    b, h, w, c = E_lr.shape
    upper_y, upper_x = _CORNER_SIDES[corner]
    iy = _neighbor_index(coords[..., 0], h, upper_y)
    ix = _neighbor_index(coords[..., 1], w, upper_x)

    flat = (iy * w + ix).unsqueeze(-1).expand(-1, -1, c)
    codes = torch.gather(E_lr.reshape(b, h * w, c), 1, flat)
    fy = iy.to(coords.dtype)
    fx = ix.to(coords.dtype)
    source = torch.stack([-1.0 + (2.0 * fy + 1.0) / h, -1.0 + (2.0 * fx + 1.0) / w], dim=-1)
    return LiftedCode(corner=corner, codes=codes, source_coords=source)


def compute_offsets(coords: torch.Tensor, lift: LiftedCode, lr_h: int, lr_w: int) -> OffsetGrid:
    """
    Смещения |x_q - x'| и их длины в долях LR-ячейки

    Args:
        coords: Координаты запросов (b, q, 2)
        lift: Результат lift_corner
        lr_h: Высота LR-кода
        lr_w: Ширина LR-кода
    """
    delta = (coords - lift.source_coords).abs()
    cell = torch.tensor([lr_h / 2.0, lr_w / 2.0], dtype=coords.dtype, device=coords.device)
    rel = delta * cell
    return OffsetGrid(delta=delta, rel=rel, distance=rel.norm(dim=-1))


def rbf_weights(offsets: OffsetGrid, sigma: torch.Tensor) -> torch.Tensor:
    """
    Гауссовы веса w = exp(-d^2 / (2 sigma^2)) в (0, 1]

    Args:
        offsets: Смещения
        sigma: Ширина RBF (> 0), скаляр

    Returns:
        Веса (b, q)
    """
    return torch.exp(-offsets.squared_distance / (2.0 * sigma * sigma))


def weight_codes(lift: LiftedCode, weights: torch.Tensor) -> LiftedCode:
    """Взвешивание поднятых кодов: E = w * E^HR с трансляцией по каналам"""
    return replace(lift, weighted=lift.codes * weights.unsqueeze(-1))


def tile_ids(coords: torch.Tensor, lr_h: int, lr_w: int, window: int) -> torch.Tensor:
    """Номер квадратного окна window x window LR-ячеек, в которое попадает запрос"""
    tiles_x = math.ceil(lr_w / window)
    ty = torch.floor((coords[..., 0] + 1.0) / 2.0 * lr_h / window).clamp(0, math.ceil(lr_h / window) - 1)
    tx = torch.floor((coords[..., 1] + 1.0) / 2.0 * lr_w / window).clamp(0, tiles_x - 1)
    return (ty * tiles_x + tx).long()


def _chunked_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, factor: float,
                       chunk: int) -> torch.Tensor:
    """Softmax(Q K^T) V блоками строк; логиты строятся только против переданных ключей"""
    outputs = []
    for start in range(0, q.shape[1], chunk):
        logits = torch.matmul(q[:, start:start + chunk], k.transpose(1, 2)) * factor
        ensure_finite(logits, "логитах внимания")
        outputs.append(torch.matmul(torch.softmax(logits, dim=-1), v))
    return torch.cat(outputs, dim=1)


def offset_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, scaled: bool = True,
                     tiles: Optional[torch.Tensor] = None, chunk: int = ATTENTION_CHUNK) -> torch.Tensor:
    """
    Softmax(Q K^T) V по оси запросов, построчными блоками

    В оконном режиме строки каждого окна собираются отдельно, и логиты
    имеют размер (окно x окно), а не (n x n).

    Args:
        q: Запросы (b, n, C)
        k: Ключи (b, n, C)
        v: Значения (b, n, C)
        scaled: Делить логиты на sqrt(C)
        tiles: Номера окон (b, n); внимание только внутри окна
        chunk: Число строк матрицы внимания за один проход

    Returns:
        Тензор (b, n, C)

    Raises:
        DivergenceError: Нечисловые логиты
    """
    factor = 1.0 / math.sqrt(q.shape[-1]) if scaled else 1.0
    if tiles is None:
        return _chunked_attention(q, k, v, factor, chunk)

    rows = []
    for b in range(q.shape[0]):
        out = torch.zeros_like(v[b])
        for tile in torch.unique(tiles[b]):
            idx = torch.nonzero(tiles[b] == tile, as_tuple=True)[0]
            part = _chunked_attention(q[b:b + 1, idx], k[b:b + 1, idx], v[b:b + 1, idx], factor, chunk)
            out = out.index_copy(0, idx, part[0])
        rows.append(out)
    return torch.stack(rows)


class OffsetRefinement(nn.Module):
    """Модуль уточнения смещений (ORM): проекции phi_q, phi_k, phi_v (свертки 1x1)"""

    def __init__(self, channels: int, scaled: bool = True, window: int = 0):
        super().__init__()
        self.phi_q = nn.Linear(2, channels)
        self.phi_k = nn.Linear(channels, channels)
        self.phi_v = nn.Linear(channels, channels)
        self.scaled = scaled
        self.window = window

    def forward(self, offsets: OffsetGrid, weighted: torch.Tensor,
                tiles: Optional[torch.Tensor] = None) -> torch.Tensor:
        q = self.phi_q(offsets.rel)
        k = self.phi_k(weighted)
        v = self.phi_v(weighted)
        return offset_attention(q, k, v, scaled=self.scaled, tiles=tiles)


def offset_refine(offsets: OffsetGrid, weighted: torch.Tensor, module: OffsetRefinement) -> torch.Tensor:
    """E_offset для одного угла без разбиения на окна"""
    return module(offsets, weighted)


class GalerkinBlock(nn.Module):
    """Итерация ядерного интеграла: нормированное линейное внимание по всем позициям с остатками"""

    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"Ширина {width} не делится на число голов {heads}")
        self.heads = heads
        self.head_dim = width // heads
        self.qkv_proj = nn.Linear(width, 3 * width, bias=False)
        self.k_norm = nn.LayerNorm(self.head_dim)
        self.v_norm = nn.LayerNorm(self.head_dim)
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, width = x.shape
        qkv = self.qkv_proj(x).reshape(b, n, self.heads, 3 * self.head_dim).transpose(1, 2)
        q, k, v = qkv.chunk(3, dim=-1)
        k = self.k_norm(k)
        v = self.v_norm(v)
        kernel = torch.matmul(k.transpose(-2, -1), v) / n
        out = torch.matmul(q, kernel).transpose(1, 2).reshape(b, n, width)
        x = x + out
        return x + self.mlp(x)


class NeuralOperatorHead(nn.Module):
    """Нейронный оператор: подъем -> T итераций ядерного интеграла -> проекция в 1 канал"""

    def __init__(self, channels: int, width: int = 64, iterations: int = 2, heads: int = 4):
        super().__init__()
        self.in_features = len(CORNERS) * (2 * channels + 2) + 1
        self.lift = nn.Linear(self.in_features, width)
        self.blocks = nn.ModuleList(GalerkinBlock(width, heads) for _ in range(iterations))
        self.proj = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, 1))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """
        Args:
            features: (b, q, in_features)

        Returns:
            Значения пикселей (b, q) без обрезки
        """
        if features.shape[-1] != self.in_features:
            raise ValueError(f"Ожидалось {self.in_features} признаков NEO, получено {features.shape[-1]}")
        x = self.lift(features)
        for block in self.blocks:
            x = block(x)
        return self.proj(x).squeeze(-1)


def neo_features(scale: torch.Tensor, corners: List[Tuple[torch.Tensor, torch.Tensor]],
                 offsets: List[OffsetGrid]) -> torch.Tensor:
    """
    Сборка входа NEO: {E_l, E_offset_l, dx_l} по четырем углам и масштаб

    Args:
        scale: Масштабы (b, 1)
        corners: Пары (E, E_offset) каждого угла, (b, q, c)
        offsets: Смещения каждого угла

    Returns:
        Признаки (b, q, 4 * (2c + 2) + 1)
    """
    shape = corners[0][0].shape[:2]
    parts = []
    for (codes, refined), grid in zip(corners, offsets):
        if codes.shape[:2] != shape or refined.shape[:2] != shape:
            raise ValueError("Размеры угловых ветвей не совпадают")
        parts.extend([codes, refined, grid.rel])
    parts.append(scale.view(-1, 1, 1).expand(shape[0], shape[1], 1).to(codes.dtype))
    return torch.cat(parts, dim=-1)


class AnyScaleUpsampler(nn.Module):
    """Апсемплер: LLE + ORM по четырем углам и NEO"""

    def __init__(self, channels: int, use_lle: bool = True, use_orm: bool = True,
                 per_corner_sigma: bool = False, sigma_init: float = 1.0, attn_scaled: bool = True,
                 orm_window: int = 0, neo_width: int = 64, neo_iterations: int = 2, neo_heads: int = 4):
        super().__init__()
        self.use_lle = use_lle
        self.use_orm = use_orm
        sigmas = len(CORNERS) if per_corner_sigma else 1
        self.log_sigma = nn.Parameter(torch.full((sigmas,), math.log(sigma_init)))
        self.orm = OffsetRefinement(channels, attn_scaled, orm_window)
        self.neo = NeuralOperatorHead(channels, neo_width, neo_iterations, neo_heads)

    def sigma(self, corner_index: int = 0) -> torch.Tensor:
        return torch.exp(self.log_sigma[corner_index % self.log_sigma.numel()])

    def corner_branch(self, E_lr: torch.Tensor, coords: torch.Tensor, corner_index: int,
                      tiles: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor, OffsetGrid]:
        """Ветвь одного угла: подъем, смещения, LLE, ORM"""
        _, h, w, _ = E_lr.shape
        lift = lift_corner(E_lr, coords, CORNERS[corner_index])
        offsets = compute_offsets(coords, lift, h, w)
        if self.use_lle:
            lift = weight_codes(lift, rbf_weights(offsets, self.sigma(corner_index)))
        else:
            lift = replace(lift, weighted=lift.codes)
        if self.use_orm:
            refined = self.orm(offsets, lift.weighted, tiles)
        else:
            refined = lift.weighted
        return lift.weighted, refined, offsets

    def forward(self, E_lr: torch.Tensor, coords: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
        """
        Декодирование произвольного набора координат

        Args:
            E_lr: Латентный код (b, h, w, c)
            coords: Запросы (b, q, 2)
            scale: Масштабы (b, 1)

        Returns:
            Значения (b, q) без обрезки
        """
        _, h, w, _ = E_lr.shape
        coords = coords.to(E_lr.dtype)
        tiles = None
        if self.use_orm and self.orm.window > 0:
            tiles = tile_ids(coords, h, w, self.orm.window)
        corners = []
        offsets = []
        for index in range(len(CORNERS)):
            codes, refined, grid = self.corner_branch(E_lr, coords, index, tiles)
            corners.append((codes, refined))
            offsets.append(grid)
        return self.neo(neo_features(scale, corners, offsets))

