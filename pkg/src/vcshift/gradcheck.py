"""Finite-difference gradient gate over tiny float64 instances of every
trainable component and loss path."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import torch

from .dsp import DspParams, log_mel_t
from .encoder import AttentionLayer, ContentEncoder, ConvStack, EncoderConfig, init_weights
from .pitch import PitchParams, f0_track_t
from .training import (
    adversarial_losses,
    feature_matching_loss,
    finite_difference_check,
    pitch_consistency_loss_t,
    reconstruction_loss,
)
from .vocoder import DiscriminatorBank, DiscriminatorConfig, F0Channels, Generator, GeneratorConfig, UpsampleStage

TOLERANCE = 1e-4
EPS = 1e-5

TINY_DSP = DspParams(sample_rate=1600, fft_size=32, win_length=32, hop_length=8, mel_count=6,
                     fmin=40.0, fmax=800.0)
TINY_PITCH = PitchParams(f_floor=100.0, f_ceiling=1000.0, yin_threshold=0.3, window=200)


@dataclass
class GradResult:
    name: str
    rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def _randn(g, *shape, scale=1.0):
    return (torch.randn(*shape, generator=g, dtype=torch.float64) * scale).requires_grad_(True)


def _module(m: torch.nn.Module, g: torch.Generator, std: float = 0.3) -> torch.nn.Module:
    # larger init than training so the probe is not dominated by near-zero weights
    init_weights(m, g, std=std)
    for p in m.parameters():
        if p.dim() == 1:
            with torch.no_grad():
                p.add_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.1)
    return m.double()


def _projected(out: torch.Tensor, g: torch.Generator) -> Callable[[torch.Tensor], torch.Tensor]:
    """Scalar probe: inner product with a fixed random tensor of out's shape."""
    w = torch.randn(out.shape, generator=g, dtype=torch.float64)
    return lambda y: (y * w).sum()


def _leaves(m: torch.nn.Module, *inputs):
    return [*inputs, *m.parameters()]


def case_linear(g):
    w = _randn(g, 5, 4)
    x = _randn(g, 4)
    proj = torch.randn(5, generator=g, dtype=torch.float64)
    return lambda: (w @ x * proj).sum(), [w, x]


def case_conv_stack(g):
    m = _module(ConvStack(3, (4, 5), 3), g)
    x = _randn(g, 1, 5, 3)
    probe = _projected(m(x), g)
    return lambda: probe(m(x)), _leaves(m, x)


def case_attention(g):
    m = _module(AttentionLayer(8, 2, 2), g)
    x = _randn(g, 1, 4, 8)
    probe = _projected(m(x), g)
    return lambda: probe(m(x)), _leaves(m, x)


def case_encoder(g):
    cfg = EncoderConfig(layer_count=1, hidden_size=8, head_count=2, conv_channels=(6, 8), conv_kernel=3,
                        ff_multiplier=2)
    m = _module(ContentEncoder(cfg, 5), g)
    x = _randn(g, 1, 6, 5)
    probe = _projected(m(x), g)
    return lambda: probe(m(x)), _leaves(m, x)


def case_upsample(g):
    m = _module(UpsampleStage(4, 3, 4, 4, (3, 5), ((1, 2), (1, 2))), g)
    x = _randn(g, 1, 4, 3)
    probe = _projected(m(x), g)
    return lambda: probe(m(x)), _leaves(m, x)


def case_generator(g):
    cfg = GeneratorConfig(upsample_strides=(4, 4), upsample_kernel=4, base_channels=8,
                          resblock_kernels=(3,), resblock_dilations=((1, 2),), input_kernel=3)
    m = _module(Generator(cfg, 6), g)
    x = _randn(g, 1, 3, 6)
    probe = _projected(m(x), g)
    return lambda: probe(m(x)), _leaves(m, x)


def case_source_generator(g):
    # harmonic-plus-noise head: f0 channels at fixed columns of a width-8 fusion input
    cfg = GeneratorConfig(upsample_strides=(4, 4), upsample_kernel=4, base_channels=8,
                          resblock_kernels=(3,), resblock_dilations=((1, 2),), input_kernel=3, harmonics=3)
    m = _module(Generator(cfg, 8, F0Channels(z_index=2, voiced_index=3, level_index=6, sample_rate=1600)), g)
    x = _randn(g, 1, 3, 8)
    with torch.no_grad():
        x[..., 3] = 1.0
        x[..., 6] = 4.5  # ~90 Hz, so harmonics stay below Nyquist
    probe = _projected(m(x), g)
    return lambda: probe(m(x)), _leaves(m, x)


def _tiny_bank(g):
    cfg = DiscriminatorConfig(scales=(1, 2), channels=(4, 4), kernels=(5, 3), strides=(2, 1), groups=(1, 2))
    return _module(DiscriminatorBank(cfg), g)


def case_discriminator(g):
    m = _tiny_bank(g)
    x = _randn(g, 1, 32, scale=0.5)
    out = m(x)
    ws = [torch.randn(s.shape, generator=g, dtype=torch.float64) for s, _ in out]

    def fn():
        return sum((s * w).sum() for (s, _), w in zip(m(x), ws))
    return fn, _leaves(m, x)


def case_reconstruction(g):
    x = _randn(g, 2, 64, scale=0.5)
    with torch.no_grad():
        target = log_mel_t(torch.randn(2, 64, generator=g, dtype=torch.float64) * 0.5, TINY_DSP)
    return lambda: reconstruction_loss(log_mel_t(x, TINY_DSP), target), [x]


def case_adversarial(g):
    m = _tiny_bank(g)
    real = torch.randn(1, 32, generator=g, dtype=torch.float64) * 0.5
    fake = _randn(g, 1, 32, scale=0.5)

    def fn():
        r, f = m(real), m(fake)
        gen, disc = adversarial_losses([s for s, _ in r], [s for s, _ in f])
        return gen + disc
    return fn, _leaves(m, fake)


def case_feature_matching(g):
    # real feature maps are targets (detached in the loss), so probe only the fake input
    m = _tiny_bank(g)
    with torch.no_grad():
        real_feats = [ft for _, ft in m(torch.randn(1, 32, generator=g, dtype=torch.float64) * 0.5)]
    fake = _randn(g, 1, 32, scale=0.5)
    return lambda: feature_matching_loss(real_feats, [ft for _, ft in m(fake)]), [fake]


def case_pitch(g):
    sr = 8000
    t = torch.arange(600, dtype=torch.float64) / sr
    base = torch.sin(2 * torch.pi * 250.0 * t) + 0.3 * torch.sin(2 * torch.pi * 500.0 * t)
    x = (base + 0.01 * torch.randn(600, generator=g, dtype=torch.float64)).requires_grad_(True)
    with torch.no_grad():
        _, voiced = f0_track_t(x, sr, TINY_PITCH, hop=50, frame_length=100)
    target = torch.full(voiced.shape, 245.0, dtype=torch.float64)

    def fn():
        f0, v = f0_track_t(x, sr, TINY_PITCH, hop=50, frame_length=100)
        return pitch_consistency_loss_t(f0, v, target, voiced)
    return fn, [x]


CASES: dict[str, Callable] = {
    "linear map": case_linear,
    "conv stack": case_conv_stack,
    "attention layer": case_attention,
    "tiny encoder": case_encoder,
    "upsample stage": case_upsample,
    "tiny generator": case_generator,
    "tiny generator with harmonic source": case_source_generator,
    "discriminator stack": case_discriminator,
    "reconstruction loss (mel path)": case_reconstruction,
    "adversarial losses": case_adversarial,
    "feature-matching loss": case_feature_matching,
    "pitch consistency loss (YIN path)": case_pitch,
}


def run_gradient_checks(names=None, seed: int = 0, eps: float = EPS, max_coords: int | None = 64) -> list[GradResult]:
    """Run the selected cases (all by default); each probes at most
    ``max_coords`` coordinates per tensor."""
    results = []
    for name in names or CASES:
        g = torch.Generator().manual_seed(seed)
        start = time.perf_counter()
        fn, tensors = CASES[name](g)
        err = finite_difference_check(fn, tensors, eps=eps, max_coords=max_coords, seed=seed)
        results.append(GradResult(name, err, time.perf_counter() - start))
    return results
