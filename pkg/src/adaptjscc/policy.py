"""Rate-control policy: categorical choice of the number of active selective groups.

Sampling follows the Gumbel-Max trick in the forward pass and the
Gumbel-Softmax relaxation for gradients (straight-through).
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

LOG_EPS = 1e-10


class PolicyNet(nn.Module):
    """avgpool(X_s) ++ snr -> Linear -> PReLU -> Linear -> softmax over {0..G_s}."""

    def __init__(self, in_channels: int, g_selective: int, hidden: int = 64):
        super().__init__()
        self.g_selective = g_selective
        self.mlp = nn.Sequential(
            nn.Linear(in_channels + 1, hidden),
            nn.PReLU(hidden),
            nn.Linear(hidden, g_selective + 1),
        )

    def forward(self, xs: torch.Tensor, snr: torch.Tensor) -> torch.Tensor:
        context = torch.cat([xs.mean(dim=(2, 3)), snr.view(-1, 1).to(xs.dtype)], dim=1)
        return F.softmax(self.mlp(context), dim=-1)


def safe_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, min=LOG_EPS))


def sample_gumbel(shape, generator: torch.Generator | None = None, dtype=torch.float32, device=None) -> torch.Tensor:
    """Standard Gumbel noise ``-log(-log U)`` with ``U`` kept inside (0, 1)."""
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    u = u.clamp(min=torch.finfo(dtype).tiny)
    return -torch.log(-torch.log(u))


def gumbel_max_sample(probs: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """One-hot at ``argmax_k(log p_k + g_k)``; ties go to the lowest index."""
    if probs.shape != noise.shape:
        raise ValueError(f"probs {tuple(probs.shape)} and noise {tuple(noise.shape)} differ in shape")
    index = torch.argmax(safe_log(probs) + noise, dim=-1)
    return F.one_hot(index, probs.shape[-1]).to(probs.dtype)


def gumbel_softmax_relax(probs: torch.Tensor, noise: torch.Tensor, tau: float) -> torch.Tensor:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if probs.shape != noise.shape:
        raise ValueError(f"probs {tuple(probs.shape)} and noise {tuple(noise.shape)} differ in shape")
    return F.softmax((safe_log(probs) + noise) / tau, dim=-1)


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, hard, soft):
        return hard.clone()

    @staticmethod
    def backward(ctx, grad):
        return None, grad


def straight_through(hard: torch.Tensor, soft: torch.Tensor) -> torch.Tensor:
    """Forward value is exactly ``hard``; the backward pass routes into ``soft``.

    Implemented as an autograd function rather than ``hard - soft.detach() + soft``,
    which is not bit-exact in floating point.
    """
    if hard.shape != soft.shape:
        raise ValueError(f"hard {tuple(hard.shape)} and soft {tuple(soft.shape)} differ in shape")
    return _StraightThrough.apply(hard.detach(), soft)


def thermometer_matrix(g_selective: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """``T[i, k-1] = 1`` iff ``i >= k``, so ``onehot @ T`` gives the mask."""
    i = torch.arange(g_selective + 1, device=device).view(-1, 1)
    k = torch.arange(1, g_selective + 1, device=device).view(1, -1)
    return (i >= k).to(dtype)


def to_thermometer(onehot: torch.Tensor) -> torch.Tensor:
    g_selective = onehot.shape[-1] - 1
    return onehot @ thermometer_matrix(g_selective, onehot.dtype, onehot.device)


def mask_from_count(count, g_selective: int, dtype=torch.float32) -> torch.Tensor:
    """Thermometer mask with the first ``count`` selective groups on."""
    count = torch.as_tensor(count)
    if torch.any(count < 0) or torch.any(count > g_selective):
        raise ValueError(f"active group count must lie in [0, {g_selective}]")
    k = torch.arange(g_selective)
    return (k < count.unsqueeze(-1)).to(dtype)


def temperature_schedule(epoch: int, tau_init: float = 5.0, decay: float = 0.015, tau_min: float = 0.1) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return max(tau_init * math.exp(-decay * epoch), tau_min)
