#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Модель AnyTSR: кодировщик E_X и апсемплер U.

Имена тензоров модели совпадают с записями контрольной точки:
encoder.layers.<слой>.blocks.<блок>.<тензор>, encoder.layers.<слой>.sam.<тензор>,
upsampler.log_sigma, upsampler.orm.<тензор>, upsampler.neo.<тензор>.
"""

import logging
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from anytsr.core.encoder import ScaleSpecificEncoder, scale_column
from anytsr.core.upsampler import AnyScaleUpsampler
from anytsr.utils.helpers import derive_seed, scaled_size, validate_scale
from anytsr.utils.imaging import make_coord_grid

logger = logging.getLogger(__name__)


class AnyTSR(nn.Module):
    """Сверхразрешение тепловизионных изображений с произвольным масштабом"""

    def __init__(self, encoder: ScaleSpecificEncoder, upsampler: AnyScaleUpsampler):
        super().__init__()
        self.encoder = encoder
        self.upsampler = upsampler

    @classmethod
    def from_config(cls, encoder_cfg, upsampler_cfg) -> "AnyTSR":
        """
        Построение модели по секциям конфигурации

        Args:
            encoder_cfg: EncoderConfig
            upsampler_cfg: UpsamplerConfig
        """
        encoder = ScaleSpecificEncoder(
            channels=encoder_cfg.channels,
            layers=encoder_cfg.layers,
            blocks=encoder_cfg.blocks,
            bank_size=encoder_cfg.bank_size,
            d_state=encoder_cfg.d_state,
            ssm_ratio=encoder_cfg.ssm_ratio,
            sam_hidden=encoder_cfg.sam_hidden,
            use_ssb_scale_term=encoder_cfg.use_ssb_scale_term,
            use_sam=encoder_cfg.use_sam,
            use_gradient_branch=encoder_cfg.use_gradient_branch,
            scan_mode=encoder_cfg.scan_mode,
            debug=encoder_cfg.debug,
        )
        upsampler = AnyScaleUpsampler(
            channels=encoder_cfg.channels,
            use_lle=upsampler_cfg.use_lle,
            use_orm=upsampler_cfg.use_orm,
            per_corner_sigma=upsampler_cfg.per_corner_sigma,
            sigma_init=upsampler_cfg.sigma_init,
            attn_scaled=upsampler_cfg.attn_scaled,
            orm_window=upsampler_cfg.orm_window,
            neo_width=upsampler_cfg.neo_width,
            neo_iterations=upsampler_cfg.neo_iterations,
            neo_heads=upsampler_cfg.neo_heads,
        )
        return cls(encoder, upsampler)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode(self, img: torch.Tensor, scale) -> torch.Tensor:
        """LR-изображения (b, 1, h, w) или (b, h, w) -> латентный код (b, h, w, c)"""
        return self.encoder(img, scale)

    def query(self, E_lr: torch.Tensor, coords: torch.Tensor, scale) -> torch.Tensor:
        """Значения в произвольных координатах (b, q, 2) -> (b, q), без обрезки"""
        s = scale_column(scale, E_lr.shape[0], E_lr)
        return self.upsampler(E_lr, coords, s)

    def forward(self, img: torch.Tensor, coords: torch.Tensor, scale) -> torch.Tensor:
        return self.query(self.encode(img, scale), coords, scale)

    def upsample(self, img: torch.Tensor, scale: float, out_h: Optional[int] = None,
                 out_w: Optional[int] = None, clip: bool = True) -> torch.Tensor:
        """
        Полное HR-изображение

        Args:
            img: LR-изображения (b, 1, h, w) или (b, h, w)
            scale: Масштаб s
            out_h: Высота выхода (по умолчанию round(s * h))
            out_w: Ширина выхода (по умолчанию round(s * w))
            clip: Обрезать в [0, 1] (режим вывода)

        Returns:
            Тензор (b, out_h, out_w)
        """
        if img.dim() == 3:
            img = img.unsqueeze(1)
        b, _, h, w = img.shape
        out_h = out_h or scaled_size(h, scale)
        out_w = out_w or scaled_size(w, scale)
        if out_h < 1 or out_w < 1:
            raise ValueError(f"Размер выхода должен быть положительным: {out_h}x{out_w}")
        grid = torch.as_tensor(make_coord_grid(out_h, out_w), dtype=img.dtype, device=img.device)
        coords = grid.reshape(1, -1, 2).expand(b, -1, -1)
        out = self.forward(img, coords, scale).reshape(b, out_h, out_w)
        if clip:
            out = out.clamp(0.0, 1.0)
        return out

    @torch.no_grad()
    def super_resolve(self, img: np.ndarray, scale: float, out_h: Optional[int] = None,
                      out_w: Optional[int] = None) -> np.ndarray:
        """
        Вывод для одного изображения numpy

        Args:
            img: LR-изображение (h, w) в [0, 1]
            scale: Масштаб (>= 1, допускаются дробные и вне обучающего диапазона)

        Returns:
            HR-изображение float64 (out_h, out_w) в [0, 1]
        """
        if not validate_scale(scale):
            raise ValueError(f"Масштаб должен быть конечным и не меньше 1: {scale}")
        was_training = self.training
        self.eval()
        try:
            tensor = torch.as_tensor(np.asarray(img), dtype=self.dtype).reshape(1, 1, *img.shape)
            out = self.upsample(tensor, float(scale), out_h, out_w, clip=True)
        finally:
            self.train(was_training)
        return out[0].double().cpu().numpy()


def build_model(encoder_cfg, upsampler_cfg, seed: int = 0) -> AnyTSR:
    """Модель с инициализацией, детерминированной по сиду запуска"""
    torch.manual_seed(derive_seed(seed, "init"))
    model = AnyTSR.from_config(encoder_cfg, upsampler_cfg)
    count = sum(p.numel() for p in model.parameters())
    logger.info("Модель построена: %d параметров", count)
    return model
