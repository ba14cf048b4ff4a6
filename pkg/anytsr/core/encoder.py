#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Масштабно-зависимый кодировщик LR-изображения.

    F_s   = Conv3x3(I_LR)
    F_D^n = S-SSL_n(F_D^{n-1}, s),  n = 1..N          (F_D^0 = F_s)
    F_L   = Conv3x3(F_D^N) + F_s
    F_grad = Conv3x3(Cat(Sobel_x, Sobel_y, Laplacian)(I_LR))
    E_LR  = F_L + F_grad

Карты признаков внутри кодировщика хранятся в формате (b, h, w, c).
Встраивание/развертка патчей при размере патча 1 тождественны и опущены.
"""

import logging
import math
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from anytsr.core.selective_scan import SCAN_MODES, selective_scan
from anytsr.utils.helpers import ensure_finite
from anytsr.utils.imaging import LAPLACIAN, SOBEL_X, SOBEL_Y

logger = logging.getLogger(__name__)

DIRECTIONS = 4


def _to_channels_first(x: torch.Tensor) -> torch.Tensor:
    return x.permute(0, 3, 1, 2)


def _to_channels_last(x: torch.Tensor) -> torch.Tensor:
    return x.permute(0, 2, 3, 1)


def scale_column(scale, batch: int, like: torch.Tensor) -> torch.Tensor:
    """Масштаб как столбец (b, 1) в dtype/device опорного тензора"""
    s = torch.as_tensor(scale, dtype=like.dtype, device=like.device)
    if s.dim() == 0:
        s = s.expand(batch)
    return s.reshape(batch, 1)


class SS2D(nn.Module):
    """Двумерное селективное сканирование в четырех направлениях"""

    def __init__(self, d_inner: int, d_state: int = 8, dt_rank: int = 0,
                 dt_min: float = 1e-3, dt_max: float = 1e-1, scan_mode: str = "sequential"):
        super().__init__()
        if scan_mode not in SCAN_MODES:
            raise ValueError(f"Неизвестный режим сканирования: {scan_mode}")
        self.d_inner = d_inner
        self.d_state = d_state
        self.dt_rank = dt_rank or math.ceil(d_inner / 16)
        self.scan_mode = scan_mode
        # 0: строки вперед, 1: столбцы вперед, 2: строки назад, 3: столбцы назад
        self.directions = tuple(range(DIRECTIONS))

        k = DIRECTIONS
        bound = d_inner ** -0.5
        self.x_proj_weight = nn.Parameter(
            torch.empty(k, self.dt_rank + 2 * d_state, d_inner).uniform_(-bound, bound)
        )
        dt_std = self.dt_rank ** -0.5
        self.dt_projs_weight = nn.Parameter(torch.empty(k, d_inner, self.dt_rank).uniform_(-dt_std, dt_std))
        # обратный softplus: softplus(bias) равномерно в лог-шкале [dt_min, dt_max]
        dt = torch.exp(torch.rand(k, d_inner) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min))
        dt = dt.clamp(min=1e-4)
        self.dt_projs_bias = nn.Parameter(dt + torch.log(-torch.expm1(-dt)))
        # S4D-real: A = -(1..n), хранится как логарифм модуля
        a = torch.arange(1, d_state + 1, dtype=torch.float32).repeat(k * d_inner, 1)
        self.A_logs = nn.Parameter(torch.log(a))
        self.Ds = nn.Parameter(torch.ones(k * d_inner))

    def _sequences(self, x: torch.Tensor) -> torch.Tensor:
        b, d, h, w = x.shape
        rows = x.reshape(b, d, h * w)
        cols = x.transpose(2, 3).reshape(b, d, h * w)
        return torch.stack([rows, cols, rows.flip(-1), cols.flip(-1)], dim=1)

    def _merge(self, ys: torch.Tensor, h: int, w: int) -> torch.Tensor:
        b, k, d, length = ys.shape
        mask = torch.zeros(k, dtype=ys.dtype, device=ys.device)
        mask[list(self.directions)] = 1.0
        ys = ys * mask.view(1, k, 1, 1)
        rows = ys[:, 0] + ys[:, 2].flip(-1)
        cols = ys[:, 1] + ys[:, 3].flip(-1)
        cols = cols.reshape(b, d, w, h).transpose(2, 3).reshape(b, d, length)
        return (rows + cols).reshape(b, d, h, w)

    def projections(self, xs: torch.Tensor):
        """Зависящие от входа dt (до смещения), B, C для последовательностей (b, k, d, l)"""
        x_dbl = torch.einsum("bkdl,kcd->bkcl", xs, self.x_proj_weight)
        dts, Bs, Cs = torch.split(x_dbl, [self.dt_rank, self.d_state, self.d_state], dim=2)
        dts = torch.einsum("bkrl,kdr->bkdl", dts, self.dt_projs_weight)
        return dts, Bs, Cs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        Args:
            x: Признаки (b, h, w, d)

        Returns:
            Признаки (b, h, w, d)
        """
        b, h, w, d = x.shape
        xs = self._sequences(_to_channels_first(x))
        dts, Bs, Cs = self.projections(xs)
        length = h * w
        ys = selective_scan(
            xs.reshape(b, -1, length),
            dts.reshape(b, -1, length),
            -torch.exp(self.A_logs),
            Bs,
            Cs,
            self.Ds,
            delta_bias=self.dt_projs_bias.reshape(-1),
            delta_softplus=True,
            mode=self.scan_mode,
        ).reshape(b, DIRECTIONS, d, length)
        return _to_channels_last(self._merge(ys, h, w))


class ScaleSpecificBlock(nn.Module):
    """
    Масштабно-зависимый блок пространства состояний (S-SSB)

        F'   = LN(F_in)
        F1   = SiLU(Linear(F'))
        F2   = LN(SS2D(SiLU(DWConv(Linear(F')))))
        F_out = Linear(F1 * F2) + F_in * MLP(s)

    Без масштабного члена вместо F_in * MLP(s) используется F_in.
    """

    def __init__(self, dim: int, d_state: int = 8, ssm_ratio: float = 1.0,
                 use_scale_term: bool = True, scan_mode: str = "sequential"):
        super().__init__()
        d_inner = max(1, int(round(ssm_ratio * dim)))
        self.use_scale_term = use_scale_term
        self.norm = nn.LayerNorm(dim)
        self.gate_proj = nn.Linear(dim, d_inner)
        self.in_proj = nn.Linear(dim, d_inner)
        self.dwconv = nn.Conv2d(d_inner, d_inner, 3, padding=1, groups=d_inner)
        self.ss2d = SS2D(d_inner, d_state, scan_mode=scan_mode)
        self.out_norm = nn.LayerNorm(d_inner)
        self.out_proj = nn.Linear(d_inner, dim)
        if use_scale_term:
            self.scale_mlp = nn.Sequential(nn.Linear(1, dim), nn.ReLU(), nn.Linear(dim, dim))
            nn.init.constant_(self.scale_mlp[2].bias, 1.0)

    def scale_embedding(self, s: torch.Tensor) -> torch.Tensor:
        return self.scale_mlp(s)

    def forward(self, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        """
        Args:
            x: Признаки (b, h, w, c)
            s: Масштабы (b, 1)
        """
        xn = self.norm(x)
        branch1 = F.silu(self.gate_proj(xn))
        branch2 = _to_channels_first(self.in_proj(xn))
        branch2 = F.silu(self.dwconv(branch2))
        branch2 = self.out_norm(self.ss2d(_to_channels_last(branch2)))
        out = self.out_proj(branch1 * branch2)
        if self.use_scale_term:
            return out + x * self.scale_embedding(s).view(x.shape[0], 1, 1, -1)
        return out + x


class ScaleAdaptiveMapping(nn.Module):
    """
    Масштабно-адаптивное отображение (SAM): банк из n матриц C x C,
    смешанных весами Softmax(Linear(ReLU(Linear(s)))) и примененных к F_in поканально
    """

    def __init__(self, dim: int, bank_size: int, hidden: int = 64):
        super().__init__()
        bound = dim ** -0.5
        self.kernels = nn.Parameter(torch.empty(bank_size, dim, dim).uniform_(-bound, bound))
        self.weight_generator = nn.Sequential(nn.Linear(1, hidden), nn.ReLU(), nn.Linear(hidden, bank_size))

    def kernel_weights(self, s: torch.Tensor) -> torch.Tensor:
        """Веса банка (b, n): неотрицательны, сумма 1"""
        return torch.softmax(self.weight_generator(s), dim=-1)

    def mixed_kernel(self, s: torch.Tensor) -> torch.Tensor:
        return torch.einsum("bn,nij->bij", self.kernel_weights(s), self.kernels)

    def forward(self, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        return torch.einsum("bhwj,bij->bhwi", x, self.mixed_kernel(s))


class ScaleSpecificLayer(nn.Module):
    """Масштабно-зависимый слой (S-SSL): M блоков, ветвь SAM и завершающая свертка 3x3"""

    def __init__(self, dim: int, depth: int, d_state: int = 8, ssm_ratio: float = 1.0,
                 bank_size: int = 2, sam_hidden: int = 64, use_scale_term: bool = True,
                 use_sam: bool = True, scan_mode: str = "sequential"):
        super().__init__()
        self.blocks = nn.ModuleList(
            ScaleSpecificBlock(dim, d_state, ssm_ratio, use_scale_term, scan_mode) for _ in range(depth)
        )
        self.sam = ScaleAdaptiveMapping(dim, bank_size, sam_hidden) if use_sam else None
        self.conv = nn.Conv2d(dim, dim, 3, padding=1)
        self.debug = False

    def forward(self, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        y = x
        for index, block in enumerate(self.blocks):
            y = block(y, s)
            if self.debug:
                ensure_finite(y, f"блоке {index}")
        if self.sam is not None:
            y = y + self.sam(x, s)
        return _to_channels_last(self.conv(_to_channels_first(y)))


class GradientBranch(nn.Module):
    """Ветвь градиентов: фиксированные Собель/лапласиан (повтор краев) и обучаемая свертка 3x3"""

    def __init__(self, dim: int):
        super().__init__()
        stencils = torch.tensor([SOBEL_X, SOBEL_Y, LAPLACIAN], dtype=torch.float32).unsqueeze(1)
        self.register_buffer("stencils", stencils)
        self.conv = nn.Conv2d(3, dim, 3, padding=1)

    def gradient_maps(self, img: torch.Tensor) -> torch.Tensor:
        padded = F.pad(img, (1, 1, 1, 1), mode="replicate")
        return F.conv2d(padded, self.stencils.to(img.dtype))

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return _to_channels_last(self.conv(self.gradient_maps(img)))


class ScaleSpecificEncoder(nn.Module):
    """Кодировщик E_X: изображение (b, 1, h, w) и масштаб -> латентный код (b, h, w, c)"""

    def __init__(self, channels: int = 32, layers: int = 2, blocks: int = 2, bank_size: int = 2,
                 d_state: int = 8, ssm_ratio: float = 1.0, sam_hidden: int = 64,
                 use_ssb_scale_term: bool = True, use_sam: bool = True,
                 use_gradient_branch: bool = True, scan_mode: str = "sequential", debug: bool = False):
        super().__init__()
        self.channels = channels
        self.debug = debug
        self.shallow = nn.Conv2d(1, channels, 3, padding=1)
        self.layers = nn.ModuleList(
            ScaleSpecificLayer(channels, blocks, d_state, ssm_ratio, bank_size, sam_hidden,
                               use_ssb_scale_term, use_sam, scan_mode)
            for _ in range(layers)
        )
        for layer in self.layers:
            layer.debug = debug
        self.conv_after = nn.Conv2d(channels, channels, 3, padding=1)
        self.gradient_branch = GradientBranch(channels) if use_gradient_branch else None

    def set_scan_mode(self, mode: str) -> None:
        for module in self.modules():
            if isinstance(module, SS2D):
                module.scan_mode = mode

    def set_directions(self, directions: Sequence[int]) -> None:
        for module in self.modules():
            if isinstance(module, SS2D):
                module.directions = tuple(directions)

    def shallow_features(self, img: torch.Tensor) -> torch.Tensor:
        """F_s: (b, 1, h, w) -> (b, h, w, c)"""
        return _to_channels_last(self.shallow(img))

    def forward(self, img: torch.Tensor, scale) -> torch.Tensor:
        if img.dim() == 3:
            img = img.unsqueeze(1)
        s = scale_column(scale, img.shape[0], img)
        shallow = self.shallow_features(img)
        deep = shallow
        for index, layer in enumerate(self.layers):
            deep = layer(deep, s)
            if self.debug:
                ensure_finite(deep, f"слое {index} кодировщика")
        out = _to_channels_last(self.conv_after(_to_channels_first(deep))) + shallow
        if self.gradient_branch is not None:
            out = out + self.gradient_branch(img)
        return out
