"""HiFi-GAN style generator and multi-scale waveform discriminators.

Three transposed-convolution stages (kernel 4, stride 4) upsample the fusion
frames by 64 so one frame maps to exactly one mel hop of audio.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from math import prod

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dsp import Waveform
from .encoder import init_weights
from .errors import ConfigError, TooShortError

LRELU_SLOPE = 0.1
NOISE_SEED = 1234


@dataclass(frozen=True)
class GeneratorConfig:
    upsample_strides: tuple = (4, 4, 4)
    upsample_kernel: int = 4
    base_channels: int = 64
    resblock_kernels: tuple = (3, 5)
    resblock_dilations: tuple = ((1, 2), (1, 2))
    input_kernel: int = 7
    harmonic_source: bool = True  # sine excitation from the f0 channels (see Generator)
    harmonics: int = 32

    def validate(self) -> "GeneratorConfig":
        if not self.upsample_strides or min(self.upsample_strides) < 1:
            raise ConfigError("vocoder.upsample_strides must be positive")
        if self.upsample_kernel < max(self.upsample_strides):
            raise ConfigError("vocoder.upsample_kernel must be >= every vocoder.upsample_strides entry")
        if len(self.resblock_kernels) != len(self.resblock_dilations):
            raise ConfigError("vocoder.resblock_kernels and vocoder.resblock_dilations differ in length")
        if self.base_channels < 2 ** len(self.upsample_strides):
            raise ConfigError("vocoder.base_channels too small for the number of stages")
        if self.harmonics < 1:
            raise ConfigError("vocoder.harmonics must be >= 1")
        return self

    @property
    def hop(self) -> int:
        return prod(self.upsample_strides)


@dataclass(frozen=True)
class DiscriminatorConfig:
    scales: tuple = (1, 2, 4)
    channels: tuple = (16, 32, 64, 64)
    kernels: tuple = (15, 21, 21, 5)
    strides: tuple = (1, 4, 4, 1)
    groups: tuple = (1, 4, 16, 1)

    def validate(self) -> "DiscriminatorConfig":
        if len(self.scales) < 2:
            raise ConfigError("vocoder.disc_scales needs at least two scales")
        if not len(self.channels) == len(self.kernels) == len(self.strides) == len(self.groups):
            raise ConfigError("vocoder.disc_channels/kernels/strides/groups lengths differ")
        return self

    @property
    def min_length(self) -> int:
        return max(self.scales) * prod(self.strides)


def _same_padding(kernel: int, dilation: int = 1) -> int:
    return dilation * (kernel - 1) // 2


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int, dilations):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel, dilation=d, padding=_same_padding(kernel, d))
            for d in dilations
        )

    def forward(self, x):
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, LRELU_SLOPE))
        return x


class UpsampleStage(nn.Module):
    """leaky-ReLU -> transposed conv (length exactly T * stride) -> mean of residual blocks."""

    def __init__(self, c_in: int, c_out: int, stride: int, kernel: int, res_kernels, res_dilations):
        super().__init__()
        pad = (kernel - stride + 1) // 2
        out_pad = 2 * pad - (kernel - stride)
        self.stride = stride
        self.up = nn.ConvTranspose1d(c_in, c_out, kernel, stride, padding=pad, output_padding=out_pad)
        self.blocks = nn.ModuleList(ResBlock(c_out, k, d) for k, d in zip(res_kernels, res_dilations))

    def forward(self, x):
        x = self.up(F.leaky_relu(x, LRELU_SLOPE))
        return sum(block(x) for block in self.blocks) / len(self.blocks)


@dataclass(frozen=True)
class F0Channels:
    """Where the generator finds pitch inside a fusion frame."""
    z_index: int  # normalized source log-f0
    voiced_index: int  # source voiced flag
    level_index: int  # target median log-f0
    sample_rate: int


class HarmonicSource(nn.Module):
    """Sine excitation at f0 = exp(level + spread * z) on voiced frames.

    ``spread`` (learned, in natural-log units) undoes the per-contour
    normalization of the source log-f0 channel. Harmonics above Nyquist are
    muted. Output (B, harmonics, T * hop).
    """

    def __init__(self, channels: F0Channels, hop: int, harmonics: int, spread: float = 0.1,
                 amplitude: float = 0.1):
        super().__init__()
        self.channels = channels
        self.hop = hop
        self.amplitude = amplitude
        self.register_buffer("orders", torch.arange(1, harmonics + 1, dtype=torch.float32), persistent=False)
        self.spread = nn.Parameter(torch.tensor(float(spread)))

    def f0(self, fusion: torch.Tensor) -> torch.Tensor:
        c = self.channels
        z, voiced, level = fusion[..., c.z_index], fusion[..., c.voiced_index], fusion[..., c.level_index]
        f0 = torch.exp(level + self.spread * z).clamp(max=c.sample_rate / 2)
        return torch.where(voiced > 0.5, f0, torch.zeros_like(f0))

    def forward(self, fusion: torch.Tensor) -> torch.Tensor:
        sr = self.channels.sample_rate
        f0 = self.f0(fusion).repeat_interleave(self.hop, dim=-1)  # (B, N)
        phase = 2 * torch.pi * torch.cumsum(f0 / sr, dim=-1)
        orders = self.orders.to(fusion.dtype).unsqueeze(-1)  # (K, 1)
        k_phase = orders * phase.unsqueeze(-2)  # (B, K, N)
        audible = (orders * f0.unsqueeze(-2) < sr / 2) & (f0.unsqueeze(-2) > 0)
        return self.amplitude * torch.where(audible, torch.sin(k_phase), torch.zeros_like(k_phase))


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig, in_width: int, f0_channels: F0Channels | None = None):
        super().__init__()
        self.cfg = cfg.validate()
        self.in_width = in_width
        ch = cfg.base_channels
        self.conv_pre = nn.Conv1d(in_width, ch, cfg.input_kernel, padding=cfg.input_kernel // 2)
        stages, injections = [], []
        rate = 1
        for s in cfg.upsample_strides:
            stages.append(UpsampleStage(ch, ch // 2, s, cfg.upsample_kernel,
                                        cfg.resblock_kernels, cfg.resblock_dilations))
            ch //= 2
            rate *= s
            pool = cfg.hop // rate
            # strided conv brings the sample-rate excitation down to this stage's rate
            injections.append(nn.Conv1d(cfg.harmonics, ch, 2 * pool if pool > 1 else 1, pool,
                                        padding=pool // 2 if pool > 1 else 0))
        self.stages = nn.ModuleList(stages)
        self.conv_post = nn.Conv1d(ch, 1, cfg.input_kernel, padding=cfg.input_kernel // 2)
        self.source = None
        if cfg.harmonic_source and f0_channels is not None:
            self.source = HarmonicSource(f0_channels, cfg.hop, cfg.harmonics)
            self.injections = nn.ModuleList(injections)
            # harmonic amplitudes offset from a 1/k (sawtooth-like) base, plus a noise level
            self.harmonic_gain = nn.Conv1d(ch, cfg.harmonics, cfg.input_kernel, padding=cfg.input_kernel // 2)
            self.register_buffer("base_gain", 1.0 / torch.arange(1, cfg.harmonics + 1, dtype=torch.float32),
                                 persistent=False)

    def forward(self, fusion: torch.Tensor) -> torch.Tensor:
        """(B, T, F) fusion frames -> (B, T * hop) samples in (-1, 1)."""
        if fusion.shape[-1] != self.in_width:
            raise ConfigError(f"fusion width {fusion.shape[-1]} does not match generator input {self.in_width}")
        x = self.conv_pre(fusion.transpose(-1, -2))
        excitation = self.source(fusion) if self.source is not None else None
        for j, stage in enumerate(self.stages):
            x = stage(x)
            if excitation is not None:
                x = x + self.injections[j](excitation)[..., : x.shape[-1]]
        h = F.leaky_relu(x, LRELU_SLOPE)
        if excitation is None:
            return torch.tanh(self.conv_post(h)).squeeze(-2)
        # Harmonic-plus-noise output. Controls are smoothed to one value per
        # frame and interpolated, so the stage features cannot imprint a
        # frame-periodic (sample_rate / hop) pattern on the waveform.
        gain = self.base_gain.to(h.dtype).unsqueeze(-1) + self._smooth(self.harmonic_gain(h))
        noise_level = self._smooth(self.conv_post(h))
        g = torch.Generator().manual_seed(NOISE_SEED)
        noise = torch.randn(h.shape[-1], generator=g, dtype=torch.float64).to(h.dtype)
        x = (gain * excitation).sum(-2, keepdim=True) + noise_level * noise
        return torch.tanh(x).squeeze(-2)

    def _smooth(self, y: torch.Tensor) -> torch.Tensor:
        hop = self.cfg.hop
        frames = F.avg_pool1d(y, hop, hop)
        return F.interpolate(frames, scale_factor=hop, mode="linear", align_corners=False)


class ScaleDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        dims = [1, *cfg.channels]
        self.convs = nn.ModuleList(
            nn.Conv1d(a, b, k, s, padding=k // 2, groups=g)
            for a, b, k, s, g in zip(dims[:-1], dims[1:], cfg.kernels, cfg.strides, cfg.groups)
        )
        self.conv_post = nn.Conv1d(dims[-1], 1, 3, padding=1)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            feats.append(x)
        x = self.conv_post(x)
        feats.append(x)
        return x.squeeze(-2), feats


class DiscriminatorBank(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.discs = nn.ModuleList(ScaleDiscriminator(cfg) for _ in cfg.scales)

    def forward(self, wav: torch.Tensor):
        """(B, N) waveform -> list over scales of (scores (B, L), feature maps)."""
        if wav.shape[-1] < self.cfg.min_length:
            raise TooShortError(f"discriminator needs >= {self.cfg.min_length} samples, got {wav.shape[-1]}")
        x = wav.unsqueeze(-2)
        out = []
        for factor, disc in zip(self.cfg.scales, self.discs):
            pooled = F.avg_pool1d(x, factor, factor) if factor > 1 else x
            out.append(disc(pooled))
        return out


def build_generator(cfg: GeneratorConfig, in_width: int, seed: int = 0,
                    f0_channels: F0Channels | None = None) -> Generator:
    gen = Generator(cfg, in_width, f0_channels)
    init_weights(gen, torch.Generator().manual_seed(seed))
    return gen


def build_discriminators(cfg: DiscriminatorConfig, seed: int = 0) -> DiscriminatorBank:
    bank = DiscriminatorBank(cfg)
    init_weights(bank, torch.Generator().manual_seed(seed))
    return bank


def generate(fusion, generator: Generator, sample_rate: int) -> Waveform:
    """Synthesize a waveform from one fusion sequence (T, F)."""
    frames = fusion.frames if hasattr(fusion, "frames") else fusion
    dtype = next(generator.parameters()).dtype
    with torch.no_grad():
        wav = generator(torch.as_tensor(frames, dtype=dtype).unsqueeze(0))[0]
    return Waveform(wav.double().numpy(), sample_rate)


def discriminate(w: Waveform, bank: DiscriminatorBank):
    """Per-scale (scores, feature maps) as numpy arrays for one waveform."""
    dtype = next(bank.parameters()).dtype
    with torch.no_grad():
        out = bank(torch.as_tensor(w.samples, dtype=dtype).unsqueeze(0))
    return [(s[0].double().numpy(), [f[0].double().numpy() for f in feats]) for s, feats in out]


def benchmark(generator: Generator, frames: int = 250, repeats: int = 3, sample_rate: int = 16000,
              seed: int = 0) -> dict:
    """Throughput of the generator on random fusion input."""
    g = torch.Generator().manual_seed(seed)
    dtype = next(generator.parameters()).dtype
    x = torch.randn(1, frames, generator.in_width, generator=g, dtype=dtype)
    with torch.no_grad():
        generator(x)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = generator(x)
            times.append(time.perf_counter() - t0)
    seconds = float(np.median(times))
    n = out.shape[-1]
    return {
        "frames": frames,
        "samples": n,
        "seconds": seconds,
        "samples_per_second": n / seconds,
        "real_time_factor": (n / sample_rate) / seconds,
    }
