#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Селективное сканирование (дискретизированная рекуррентность пространства состояний):

    h_t = exp(dt_t * A) * h_{t-1} + dt_t * B_t * u_t
    y_t = <C_t, h_t> + D * u_t

с диагональной матрицей A и зависящими от входа dt, B, C.
Два режима с одинаковым результатом: последовательный цикл по времени
и параллельный префиксный скан аффинных отображений (Hillis–Steele, log2(L) шагов).
"""

from typing import Optional

import torch
import torch.nn.functional as F

SCAN_MODES = ("sequential", "parallel")


def _expand_groups(x: torch.Tensor, channels: int) -> torch.Tensor:
    # (b, g, n, l) -> (b, d, l, n): каналы группы делят общие B/C
    b, groups, n, length = x.shape
    if channels % groups != 0:
        raise ValueError(f"Число каналов {channels} не делится на число групп {groups}")
    x = x.repeat_interleave(channels // groups, dim=1)
    return x.permute(0, 1, 3, 2)


def _scan_sequential(decay: torch.Tensor, drive: torch.Tensor) -> torch.Tensor:
    state = torch.zeros_like(drive[:, :, 0])
    states = []
    for t in range(drive.shape[2]):
        state = decay[:, :, t] * state + drive[:, :, t]
        states.append(state)
    return torch.stack(states, dim=2)


def _scan_parallel(decay: torch.Tensor, drive: torch.Tensor) -> torch.Tensor:
    # элемент t хранит отображение на отрезке (t - offset, t]; h_{-1} = 0
    length = drive.shape[2]
    offset = 1
    while offset < length:
        drive = torch.cat(
            [drive[:, :, :offset], drive[:, :, offset:] + decay[:, :, offset:] * drive[:, :, :-offset]],
            dim=2,
        )
        decay = torch.cat([decay[:, :, :offset], decay[:, :, offset:] * decay[:, :, :-offset]], dim=2)
        offset *= 2
    return drive


def selective_scan(
    u: torch.Tensor,
    delta: torch.Tensor,
    A: torch.Tensor,
    B: torch.Tensor,
    C: torch.Tensor,
    D: Optional[torch.Tensor] = None,
    delta_bias: Optional[torch.Tensor] = None,
    delta_softplus: bool = False,
    mode: str = "sequential",
) -> torch.Tensor:
    """
    Селективное сканирование по последней оси

    Args:
        u: Вход (b, d, l)
        delta: Шаг дискретизации до смещения/softplus (b, d, l)
        A: Диагональ матрицы состояния (d, n)
        B: Входная проекция (b, g, n, l); g делит d
        C: Выходная проекция (b, g, n, l)
        D: Коэффициент пропуска (d,)
        delta_bias: Смещение шага (d,)
        delta_softplus: Применить softplus к шагу
        mode: "sequential" или "parallel"

    Returns:
        Выход (b, d, l)
    """
    if mode not in SCAN_MODES:
        raise ValueError(f"Неизвестный режим сканирования: {mode}")
    channels = u.shape[1]
    dt = delta
    if delta_bias is not None:
        dt = dt + delta_bias.view(1, -1, 1)
    if delta_softplus:
        dt = F.softplus(dt)

    dt = dt.unsqueeze(-1)                                   # (b, d, l, 1)
    decay = torch.exp(dt * A.view(1, channels, 1, -1))      # (b, d, l, n)
    drive = dt * _expand_groups(B, channels) * u.unsqueeze(-1)
    if mode == "sequential":
        states = _scan_sequential(decay, drive)
    else:
        states = _scan_parallel(decay, drive)

    y = (states * _expand_groups(C, channels)).sum(dim=-1)
    if D is not None:
        y = y + D.view(1, -1, 1) * u
    return y
