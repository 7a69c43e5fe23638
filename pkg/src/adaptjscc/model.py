"""End-to-end adaptive-rate JSCC model."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from . import channel
from .codec import ChannelDecoder, ChannelEncoder, SourceDecoder, SourceEncoder
from .config import ExperimentConfig
from .policy import (
    PolicyNet,
    gumbel_max_sample,
    gumbel_softmax_relax,
    mask_from_count,
    sample_gumbel,
    straight_through,
    to_thermometer,
)


@dataclass
class ForwardResult:
    y: torch.Tensor
    mask: torch.Tensor            # thermometer mask used in the forward pass, [B, G_s]
    soft: torch.Tensor | None     # relaxed decision (train mode only), [B, G_s + 1]
    probs: torch.Tensor | None    # policy distribution, [B, G_s + 1]
    g_active: torch.Tensor        # [B]

    @property
    def selective(self) -> torch.Tensor:
        return self.mask.detach().sum(dim=-1)


class JSCCModel(nn.Module):
    """Source codec, SNR-adaptive channel codec and (optionally) a policy network.

    With ``fixed_groups`` set, the policy is replaced by a constant thermometer
    mask and the model is a fixed-rate baseline.
    """

    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config
        c = config.source_channels
        spatial = (config.image_height // 4, config.image_width // 4)
        self.source_encoder = SourceEncoder(c)
        self.channel_encoder = ChannelEncoder(c, config.n_groups, config.group_length, spatial)
        self.channel_decoder = ChannelDecoder(c, config.n_groups, config.group_length, spatial)
        self.source_decoder = SourceDecoder(c)
        self.fixed_groups = config.fixed_groups
        self.policy = PolicyNet(c, config.g_selective) if config.fixed_groups is None else None

    @property
    def adaptive(self) -> bool:
        return self.policy is not None

    def parameter_counts(self) -> dict[str, int]:
        counts = {
            name: sum(p.numel() for p in module.parameters())
            for name, module in self.named_children()
            if module is not None
        }
        counts["total"] = sum(counts.values())
        return counts

    def decide(self, xs, snr, mode: str, tau: float | None, generator, decision: str):
        """Return ``(mask, soft, probs)`` for a batch of source features."""
        batch = xs.shape[0]
        g_s = self.config.g_selective
        if not self.adaptive:
            mask = mask_from_count(torch.full((batch,), self.fixed_groups), g_s, xs.dtype).to(xs.device)
            return mask, None, None
        probs = self.policy(xs, snr)
        if mode == "train":
            if tau is None:
                raise ValueError("train mode needs a temperature")
            noise = sample_gumbel(probs.shape, generator, probs.dtype, probs.device)
            hard = gumbel_max_sample(probs, noise)
            soft = gumbel_softmax_relax(probs, noise, tau)
            return to_thermometer(straight_through(hard, soft)), soft, probs
        if decision == "argmax":
            index = torch.argmax(probs, dim=-1)
            hard = nn.functional.one_hot(index, g_s + 1).to(probs.dtype)
        elif decision == "sample":
            noise = sample_gumbel(probs.shape, generator, probs.dtype, probs.device)
            hard = gumbel_max_sample(probs, noise)
        else:
            raise ValueError(f"unknown decision rule {decision!r}")
        return to_thermometer(hard), None, probs

    def forward(
        self,
        x: torch.Tensor,
        snr,
        mode: str = "eval",
        tau: float | None = None,
        generator: torch.Generator | None = None,
        decision: str = "argmax",
        mask: torch.Tensor | None = None,
        noiseless: bool = False,
    ) -> ForwardResult:
        """Encode, select a rate, transmit over AWGN and decode.

        ``mask`` overrides the policy with an explicit thermometer mask.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        batch = x.shape[0]
        snr = torch.as_tensor(snr, dtype=x.dtype, device=x.device)
        if snr.dim() == 0:
            snr = snr.expand(batch)
        xs = self.source_encoder(x)
        if mask is None:
            mask, soft, probs = self.decide(xs, snr, mode, tau, generator, decision)
        else:
            mask = mask.to(dtype=x.dtype, device=x.device).expand(batch, -1)
            soft = probs = None
        features = self.channel_encoder(xs, snr)
        frame = channel.power_normalize(channel.make_frame(features, mask, self.config.g_nonselective))
        received = channel.awgn_transmit(frame, snr, generator=generator, noiseless=noiseless)
        padded = channel.zero_pad_inactive(received)
        y = self.source_decoder(self.channel_decoder(padded, snr))
        return ForwardResult(y, mask, soft, probs, frame.g_active)
