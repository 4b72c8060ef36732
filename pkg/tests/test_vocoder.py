import numpy as np
import pytest
import torch

from vcshift.dsp import Waveform
from vcshift.encoder import init_weights
from vcshift.errors import ConfigError, TooShortError
from vcshift.vocoder import (
    DiscriminatorBank,
    DiscriminatorConfig,
    F0Channels,
    Generator,
    GeneratorConfig,
    UpsampleStage,
    benchmark,
    build_discriminators,
    build_generator,
    discriminate,
    generate,
)

SMALL = GeneratorConfig(base_channels=16)
WIDTH = 12
F0_AT = F0Channels(z_index=4, voiced_index=5, level_index=10, sample_rate=16000)


@pytest.mark.parametrize("t", [1, 3, 10])
def test_length_contract(t):
    gen = build_generator(SMALL, WIDTH, seed=0, f0_channels=F0_AT)
    x = torch.randn(1, t, WIDTH)
    out = gen(x)
    assert out.shape == (1, 64 * t)
    assert torch.all(out.abs() < 1)


def test_ten_frames_give_640_samples():
    w = generate(np.random.default_rng(0).normal(size=(10, WIDTH)), build_generator(SMALL, WIDTH), 16000)
    assert len(w) == 640


def test_zero_network_is_silent():
    gen = Generator(SMALL, WIDTH)
    for p in gen.parameters():
        torch.nn.init.zeros_(p)
    assert torch.count_nonzero(gen(torch.randn(1, 5, WIDTH))) == 0


def test_unvoiced_input_mutes_harmonic_source():
    gen = Generator(SMALL, WIDTH, F0_AT)
    for p in gen.parameters():
        torch.nn.init.zeros_(p)
    x = torch.randn(1, 5, WIDTH)
    x[..., F0_AT.voiced_index] = 0.0
    assert torch.count_nonzero(gen(x)) == 0


def test_harmonic_source_sets_pitch():
    from vcshift.pitch import estimate_f0
    gen = Generator(SMALL, WIDTH, F0_AT)
    for p in gen.parameters():
        torch.nn.init.zeros_(p)
    x = torch.zeros(1, 40, WIDTH)
    x[..., F0_AT.voiced_index] = 1.0
    x[..., F0_AT.level_index] = np.log(180.0)
    with torch.no_grad():
        w = Waveform(gen(x)[0].double().numpy(), 16000)
    assert estimate_f0(w).median() == pytest.approx(180.0, rel=0.01)


def test_generate_deterministic():
    x = np.random.default_rng(1).normal(size=(7, WIDTH))
    a = generate(x, build_generator(SMALL, WIDTH, seed=3, f0_channels=F0_AT), 16000)
    b = generate(x, build_generator(SMALL, WIDTH, seed=3, f0_channels=F0_AT), 16000)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_width_mismatch():
    with pytest.raises(ConfigError):
        build_generator(SMALL, WIDTH)(torch.randn(1, 3, WIDTH + 1))


def test_upsample_stage_length():
    stage = UpsampleStage(4, 4, 4, 4, (3, 5), ((1, 2), (1, 2)))
    assert stage(torch.randn(1, 4, 5)).shape == (1, 4, 20)


def test_transposed_conv_support_is_kernel_wide():
    # perturbation probe on the bare transposed conv: a delta at step t touches only its k-wide window
    stage = UpsampleStage(2, 2, 4, 4, (3,), ((1,),))
    init_weights(stage, torch.Generator().manual_seed(0), std=0.5)
    up = stage.up
    x = torch.zeros(1, 2, 6)
    base = up(x)
    x[0, 0, 2] = 1.0
    diff = (up(x) - base).abs().sum(1)[0]
    nz = torch.nonzero(diff).flatten()
    assert len(nz) > 0
    assert nz.max() - nz.min() + 1 <= up.kernel_size[0]
    assert nz.min() >= 2 * 4 - up.padding[0]


def test_generator_config_validation():
    with pytest.raises(ConfigError, match="vocoder.upsample_kernel"):
        GeneratorConfig(upsample_kernel=3).validate()
    with pytest.raises(ConfigError, match="vocoder.resblock"):
        GeneratorConfig(resblock_kernels=(3,)).validate()
    assert GeneratorConfig().hop == 64


def test_discriminator_pooling_and_scores():
    bank = build_discriminators(DiscriminatorConfig(), seed=0)
    w = Waveform(np.random.default_rng(0).uniform(-1, 1, 640), 16000)
    out = discriminate(w, bank)
    assert len(out) == 3
    assert all(np.all(np.isfinite(s)) for s, _ in out)
    again = discriminate(w, bank)
    for (s1, _), (s2, _) in zip(out, again):
        np.testing.assert_array_equal(s1, s2)
    # scale 2 sees a 320-sample pooled input; the first conv is stride 1 and same-length
    pooled = torch.nn.functional.avg_pool1d(torch.as_tensor(w.samples, dtype=torch.float32)[None, None], 2)
    assert pooled.shape[-1] == 320
    assert out[1][1][0].shape[-1] == 320


def test_discriminator_too_short():
    bank = DiscriminatorBank(DiscriminatorConfig())
    with pytest.raises(TooShortError):
        bank(torch.zeros(1, 10))
    with pytest.raises(ConfigError):
        DiscriminatorConfig(scales=(1,)).validate()


def test_benchmark_finite():
    stats = benchmark(build_generator(SMALL, WIDTH), frames=20, repeats=2)
    assert stats["samples"] == 1280
    assert all(np.isfinite(v) and v > 0 for v in stats.values())
