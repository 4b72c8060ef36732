"""Content encoder: stride-1 1D convolutions followed by pre-norm
self-attention layers, mel frames in, one embedding per frame out.

There is no positional embedding. Relative position reaches the attention
layers only through the convolutional front end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dsp import MelSpectrogram
from .errors import ConfigError

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    layer_count: int = 2
    hidden_size: int = 64
    head_count: int = 4
    conv_channels: tuple = (64, 64)
    conv_kernel: int = 5
    ff_multiplier: int = 4
    freeze_target_path: bool = False

    def validate(self) -> "EncoderConfig":
        if self.layer_count < 1:
            raise ConfigError("encoder.layer_count must be >= 1")
        if self.head_count < 1 or self.hidden_size % self.head_count:
            raise ConfigError("encoder.hidden_size must be divisible by encoder.head_count")
        if not self.conv_channels or self.conv_channels[-1] != self.hidden_size:
            raise ConfigError("encoder.conv_channels must end with encoder.hidden_size")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError("encoder.conv_kernel must be a positive odd number")
        if self.ff_multiplier < 1:
            raise ConfigError("encoder.ff_multiplier must be >= 1")
        return self


DESK_ENCODER = EncoderConfig()
PAPER_ENCODER = EncoderConfig(layer_count=12, hidden_size=768, head_count=12,
                              conv_channels=(512, 768), conv_kernel=5, ff_multiplier=4)


@dataclass
class ContentEmbedding:
    frames: np.ndarray  # (T, H)

    @property
    def hidden_size(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


def init_weights(module: nn.Module, generator: torch.Generator, std: float = INIT_STD) -> None:
    """Normal(0, std) weights, zero biases, unit LayerNorm gains."""
    for m in module.modules():
        if isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.Linear, nn.Conv1d, nn.ConvTranspose1d)):
            nn.init.normal_(m.weight, 0.0, std, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ConvStack(nn.Module):
    """Same-length convolutions along time with GELU between layers."""

    def __init__(self, in_channels: int, channels, kernel: int):
        super().__init__()
        dims = [in_channels, *channels]
        self.convs = nn.ModuleList(
            nn.Conv1d(a, b, kernel, padding=kernel // 2) for a, b in zip(dims[:-1], dims[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, C_in) -> (B, T, C_out)
        h = x.transpose(-1, -2)
        for i, conv in enumerate(self.convs):
            if i:
                h = F.gelu(h)
            h = conv(h)
        return h.transpose(-1, -2)


class AttentionLayer(nn.Module):
    def __init__(self, hidden: int, heads: int, ff_multiplier: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(hidden)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.proj = nn.Linear(hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.ff_in = nn.Linear(hidden, ff_multiplier * hidden)
        self.ff_out = nn.Linear(ff_multiplier * hidden, hidden)

    def attend(self, h: torch.Tensor):
        """Multi-head scaled dot-product attention over already-normalized
        frames ``h`` (B, T, H). Returns the head-concatenated context (before
        the output projection) and the weights (B, heads, T, T)."""
        b, t, hidden = h.shape
        d = hidden // self.heads
        q, k, v = self.qkv(h).split(hidden, dim=-1)
        q, k, v = (z.reshape(b, t, self.heads, d).transpose(1, 2) for z in (q, k, v))
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
        ctx = (weights @ v).transpose(1, 2).reshape(b, t, hidden)
        return ctx, weights

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ctx, _ = self.attend(self.norm1(x))
        x = x + self.proj(ctx)
        return x + self.ff_out(F.gelu(self.ff_in(self.norm2(x))))


class ContentEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, mel_count: int):
        super().__init__()
        self.cfg = cfg.validate()
        self.conv = ConvStack(mel_count, cfg.conv_channels, cfg.conv_kernel)
        self.layers = nn.ModuleList(
            AttentionLayer(cfg.hidden_size, cfg.head_count, cfg.ff_multiplier)
            for _ in range(cfg.layer_count)
        )

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """(B, T, M) log-mel -> (B, T, H) content embeddings."""
        x = self.conv(mel)
        for layer in self.layers:
            x = layer(x)
        return x


def build_encoder(cfg: EncoderConfig, mel_count: int, seed: int = 0) -> ContentEncoder:
    enc = ContentEncoder(cfg, mel_count)
    init_weights(enc, torch.Generator().manual_seed(seed))
    return enc


def encode(mel: MelSpectrogram, encoder: ContentEncoder) -> ContentEmbedding:
    if len(mel) < 1:
        raise ValueError("mel-spectrogram has no frames")
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        x = torch.as_tensor(mel.frames, dtype=dtype).unsqueeze(0)
        out = encoder(x)[0]
    return ContentEmbedding(out.double().numpy())
