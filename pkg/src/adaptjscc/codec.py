"""Source and channel encoder/decoder networks."""
from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ConfigError


def _snr_column(snr, batch: int, like: torch.Tensor) -> torch.Tensor:
    snr = torch.as_tensor(snr, dtype=like.dtype, device=like.device)
    if snr.dim() == 0:
        snr = snr.expand(batch)
    return snr.reshape(batch, 1)


class SourceEncoder(nn.Module):
    def __init__(self, channels: int = 64, hidden: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, hidden, 5, stride=2, padding=2),
            nn.PReLU(hidden),
            nn.Conv2d(hidden, channels, 5, stride=2, padding=2),
            nn.PReLU(channels),
        )

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected images [batch, 3, H, W], got {tuple(x.shape)}")
        return self.net(x)


class SourceDecoder(nn.Module):
    def __init__(self, channels: int = 64, hidden: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.ConvTranspose2d(channels, hidden, 5, stride=2, padding=2, output_padding=1),
            nn.PReLU(hidden),
            nn.ConvTranspose2d(hidden, 3, 5, stride=2, padding=2, output_padding=1),
            nn.Sigmoid(),
        )

    def forward(self, fs):
        return self.net(fs)


class SNRAdaptive(nn.Module):
    """Channel-wise scale and shift computed from pooled features and the SNR.

    ``out = f * sigmoid(mlp_scale(ctx)) + mlp_shift(ctx)`` with
    ``ctx = [avgpool(f), snr]``.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.scale = nn.Sequential(
            nn.Linear(channels + 1, channels), nn.PReLU(channels), nn.Linear(channels, channels), nn.Sigmoid()
        )
        self.shift = nn.Sequential(nn.Linear(channels + 1, channels), nn.PReLU(channels), nn.Linear(channels, channels))

    def forward(self, f, snr):
        context = torch.cat([f.mean(dim=(2, 3)), _snr_column(snr, f.shape[0], f)], dim=1)
        s = self.scale(context)[:, :, None, None]
        b = self.shift(context)[:, :, None, None]
        return f * s + b


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.PReLU(channels),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class ChannelEncoder(nn.Module):
    """Residual + SNR-adaptive body, 1x1 projection, reshape to ``[B, G, L]``."""

    def __init__(self, channels: int, n_groups: int, group_length: int, spatial: tuple[int, int], n_blocks: int = 2):
        super().__init__()
        h, w = spatial
        total = n_groups * group_length
        if total % (h * w):
            raise ConfigError(
                f"{n_groups} groups x {group_length} features do not tile a {h}x{w} feature map"
            )
        self.n_groups, self.group_length = n_groups, group_length
        self.out_channels = total // (h * w)
        self.blocks = nn.ModuleList(ResBlock(channels) for _ in range(n_blocks))
        self.adapt = nn.ModuleList(SNRAdaptive(channels) for _ in range(n_blocks))
        self.project = nn.Conv2d(channels, self.out_channels, 1)

    def forward(self, xs, snr):
        f = xs
        for block, adapt in zip(self.blocks, self.adapt):
            f = adapt(block(f), snr)
        return self.project(f).reshape(f.shape[0], self.n_groups, self.group_length)


class ChannelDecoder(nn.Module):
    def __init__(self, channels: int, n_groups: int, group_length: int, spatial: tuple[int, int], n_blocks: int = 2):
        super().__init__()
        h, w = spatial
        self.spatial = spatial
        self.in_channels = n_groups * group_length // (h * w)
        self.expand = nn.Conv2d(self.in_channels, channels, 1)
        self.blocks = nn.ModuleList(ResBlock(channels) for _ in range(n_blocks))
        self.adapt = nn.ModuleList(SNRAdaptive(channels) for _ in range(n_blocks))

    def forward(self, padded, snr):
        h, w = self.spatial
        f = self.expand(padded.reshape(padded.shape[0], self.in_channels, h, w))
        for block, adapt in zip(self.blocks, self.adapt):
            f = adapt(block(f), snr)
        return f
