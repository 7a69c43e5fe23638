"""Grouped-feature framing, complex mapping, power normalization and AWGN.

Group layout along dim 1 is ``[non-selective (G_n) | selective (G_s)]`` so the
active groups of any frame are always a prefix of length ``g_active``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
import torch

from .errors import ConfigError, DegenerateInputError, FramingError


@dataclass
class SymbolFrame:
    """Complex symbols ``[batch, G_n + G_s, L/2]`` plus per-group activity.

    ``active`` is a float tensor ``[batch, G_n + G_s]`` holding 0/1 values in
    the forward pass; during training it may carry straight-through gradients.
    """

    symbols: torch.Tensor
    active: torch.Tensor
    g_selective: int
    g_nonselective: int

    @property
    def n_groups(self) -> int:
        return self.g_selective + self.g_nonselective

    @property
    def g_active(self) -> torch.Tensor:
        return self.active.detach().sum(dim=-1).round().long()


def check_group_length(length: int) -> None:
    if length <= 0 or length % 2:
        raise ConfigError(f"group length must be a positive even number, got {length}")


def group_activity(mask: torch.Tensor, g_nonselective: int) -> torch.Tensor:
    """Prepend the always-on non-selective groups to a selective mask."""
    ones = torch.ones(*mask.shape[:-1], g_nonselective, dtype=mask.dtype, device=mask.device)
    return torch.cat([ones, mask], dim=-1)


def map_to_complex(features: torch.Tensor) -> torch.Tensor:
    """Pair feature ``j`` with ``j + L/2`` of each group as real/imag parts."""
    length = features.shape[-1]
    check_group_length(length)
    half = length // 2
    return torch.complex(features[..., :half].contiguous(), features[..., half:].contiguous())


def unmap_complex(symbols: torch.Tensor) -> torch.Tensor:
    return torch.cat([symbols.real, symbols.imag], dim=-1)


def make_frame(features: torch.Tensor, mask: torch.Tensor, g_nonselective: int) -> SymbolFrame:
    """Build an unnormalized frame from ``[B, G, L]`` features and a selective mask.

    The symbols are not gated yet; ``power_normalize`` applies the mask once.
    """
    if features.dim() != 3:
        raise FramingError(f"expected features of shape [batch, groups, L], got {tuple(features.shape)}")
    active = group_activity(mask.to(features.dtype), g_nonselective)
    if active.shape != features.shape[:2]:
        raise FramingError(
            f"mask covers {active.shape[-1]} groups but features carry {features.shape[1]}"
        )
    return SymbolFrame(map_to_complex(features), active, mask.shape[-1], g_nonselective)


def power_normalize(frame: SymbolFrame) -> SymbolFrame:
    """Scale each image so its active symbols have unit mean power.

    Inactive positions come out exactly zero. The scale is one positive
    scalar per image. The mask multiplies the symbols exactly once, so under
    a straight-through mask an inactive group still receives the gradient of
    "what if it had been sent".
    """
    active = frame.active.unsqueeze(-1)
    n_active = frame.active.detach().sum(dim=-1) * frame.symbols.shape[-1]
    if torch.any(n_active <= 0):
        raise DegenerateInputError("frame has no active symbols")
    energy = (frame.symbols.abs().square() * active.detach()).sum(dim=(-2, -1))
    if torch.any(energy.detach() <= 0):
        raise DegenerateInputError("cannot normalize a frame whose active symbols are all zero")
    scale = torch.sqrt(n_active / energy)
    symbols = frame.symbols * active * scale.view(-1, 1, 1)
    return replace(frame, symbols=symbols)


def snr_to_noise_variance(snr_db):
    """Complex noise variance for unit signal power: ``10 ** (-snr / 10)``."""
    if isinstance(snr_db, torch.Tensor):
        return torch.pow(10.0, -snr_db / 10.0)
    return 10.0 ** (-float(snr_db) / 10.0)


def awgn_transmit(
    frame: SymbolFrame,
    snr_db,
    generator: torch.Generator | None = None,
    seed: int | None = None,
    noiseless: bool = False,
) -> SymbolFrame:
    """Add circular complex Gaussian noise to the active positions.

    ``snr_db`` is a scalar or a per-image tensor. Each of the real and
    imaginary parts carries half the noise variance. Pass either a
    ``generator`` (advanced in place) or a ``seed``.
    """
    if noiseless:
        return replace(frame, symbols=frame.symbols.clone())
    if generator is None:
        generator = torch.Generator(device=frame.symbols.device)
        generator.manual_seed(0 if seed is None else seed)
    real_dtype = frame.symbols.real.dtype
    batch = frame.symbols.shape[0]
    snr = torch.as_tensor(snr_db, dtype=real_dtype, device=frame.symbols.device)
    if snr.dim() == 0:
        snr = snr.expand(batch)
    if not torch.all(torch.isfinite(snr)):
        raise ValueError("SNR must be finite; use noiseless=True for an ideal channel")
    sigma = torch.sqrt(snr_to_noise_variance(snr) / 2).view(-1, 1, 1)
    shape = frame.symbols.shape
    noise_re = torch.randn(shape, generator=generator, dtype=real_dtype, device=frame.symbols.device)
    noise_im = torch.randn(shape, generator=generator, dtype=real_dtype, device=frame.symbols.device)
    keep = (frame.active.detach() > 0).to(real_dtype).unsqueeze(-1)
    noise = torch.complex(noise_re * sigma * keep, noise_im * sigma * keep)
    return replace(frame, symbols=frame.symbols + noise)


def zero_pad_inactive(frame: SymbolFrame) -> torch.Tensor:
    """Receiver side: real ``[B, G, L]`` features with inactive groups zeroed."""
    active = frame.active.detach()
    if active.shape != frame.symbols.shape[:2]:
        raise FramingError(
            f"activity shape {tuple(active.shape)} does not match frame {tuple(frame.symbols.shape)}"
        )
    if active.shape[-1] != frame.n_groups:
        raise FramingError("activity length differs from G_n + G_s")
    # thermometer framing: no 0 -> 1 transitions along the group axis
    if torch.any(active[..., 1:] > active[..., :-1]):
        raise FramingError("active groups are not a prefix of the frame")
    if frame.g_nonselective and torch.any(active[..., : frame.g_nonselective] == 0):
        raise FramingError("a non-selective group is marked inactive")
    real = unmap_complex(frame.symbols)
    drop = (active <= 0).to(real.dtype).unsqueeze(-1)
    # forward: x - x == 0 exactly on dropped groups; backward: identity
    return real - (real * drop).detach()


def compute_cpp(g_active, length: int, height: int, width: int):
    """Channel uses per pixel: ``g_active * L / (2 * H * W)``."""
    if length <= 0 or height <= 0 or width <= 0:
        raise ValueError("L, H and W must be positive")
    if isinstance(g_active, torch.Tensor):
        if torch.any(g_active <= 0):
            raise ValueError("g_active must be positive")
        return g_active.double() * length / (2 * height * width)
    arr = np.asarray(g_active)
    if np.any(arr <= 0):
        raise ValueError("g_active must be positive")
    cpp = arr * length / (2 * height * width)
    return float(cpp) if arr.ndim == 0 else cpp


# --- debug frame dumps -------------------------------------------------------
# Each record: header <IIII (G_s, G_n, L, g_active) followed by g_active*L/2
# interleaved float32 (re, im) pairs, group-major. Only transmitted groups are
# stored; inactive groups are zero by construction.

_HEADER = struct.Struct("<4I")


def dump_frame(frame: SymbolFrame) -> bytes:
    out = bytearray()
    half = frame.symbols.shape[-1]
    symbols = frame.symbols.detach().cpu()
    for b, g_active in enumerate(frame.g_active.tolist()):
        out += _HEADER.pack(frame.g_selective, frame.g_nonselective, 2 * half, g_active)
        s = symbols[b, :g_active]
        pairs = torch.stack([s.real, s.imag], dim=-1).numpy().astype("<f4")
        out += pairs.tobytes()
    return bytes(out)


def load_frame(blob: bytes) -> SymbolFrame:
    symbols, actives, dims = [], [], None
    offset = 0
    while offset < len(blob):
        if offset + _HEADER.size > len(blob):
            raise FramingError("truncated frame header")
        g_s, g_n, length, g_active = _HEADER.unpack_from(blob, offset)
        offset += _HEADER.size
        if dims is None:
            dims = (g_s, g_n, length)
        elif dims != (g_s, g_n, length):
            raise FramingError("records in one dump must share G_s, G_n and L")
        if not g_n <= g_active <= g_s + g_n:
            raise FramingError(f"g_active={g_active} outside [{g_n}, {g_s + g_n}]")
        count = g_active * length
        if offset + 4 * count > len(blob):
            raise FramingError("truncated frame payload")
        pairs = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        full = np.zeros((g_s + g_n, length // 2), dtype=np.complex64)
        full[:g_active] = (pairs[0::2] + 1j * pairs[1::2]).reshape(g_active, length // 2)
        symbols.append(full)
        act = np.zeros(g_s + g_n, dtype=np.float32)
        act[:g_active] = 1
        actives.append(act)
    if dims is None:
        raise FramingError("empty frame dump")
    return SymbolFrame(
        torch.from_numpy(np.stack(symbols)),
        torch.from_numpy(np.stack(actives)),
        dims[0],
        dims[1],
    )
