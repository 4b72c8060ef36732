import numpy as np
import pytest
import torch

from vcshift.dsp import MelSpectrogram
from vcshift.encoder import (
    DESK_ENCODER,
    PAPER_ENCODER,
    AttentionLayer,
    ContentEncoder,
    ConvStack,
    EncoderConfig,
    build_encoder,
    encode,
    init_weights,
)
from vcshift.errors import ConfigError

def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


def _layer(hidden=8, heads=2, seed=0, std=0.3):
    m = AttentionLayer(hidden, heads, 2).double()
    init_weights(m, _gen(seed), std=std)
    return m


def test_conv_delta_kernel_is_channel_map():
    m = ConvStack(3, (4,), 5).double()
    w = torch.randn(4, 3, generator=_gen(), dtype=torch.float64)
    with torch.no_grad():
        m.convs[0].weight.zero_()
        m.convs[0].weight[:, :, 2] = w
        m.convs[0].bias.zero_()
    x = torch.randn(1, 7, 3, generator=_gen(1), dtype=torch.float64)
    torch.testing.assert_close(m(x), x @ w.T)


def test_conv_zero_in_zero_out():
    m = ConvStack(3, (6, 4), 5).double()
    init_weights(m, _gen())
    assert torch.count_nonzero(m(torch.zeros(1, 9, 3, dtype=torch.float64))) == 0


def test_conv_receptive_field():
    k, layers = 3, 2
    m = ConvStack(2, (4, 4), k).double()
    init_weights(m, _gen(), std=0.5)
    x = torch.randn(1, 7, 2, generator=_gen(1), dtype=torch.float64)
    base = m(x)
    reach = layers * (k // 2)
    t = 3
    for j in range(7):
        y = x.clone()
        y[0, j] += 1.0
        changed = not torch.equal(m(y)[0, t], base[0, t])
        assert changed == (abs(j - t) <= reach)


def test_attention_rows_sum_to_one():
    m = _layer()
    x = torch.randn(2, 6, 8, generator=_gen(3), dtype=torch.float64)
    _, w = m.attend(m.norm1(x))
    torch.testing.assert_close(w.sum(-1), torch.ones(2, 2, 6, dtype=torch.float64), atol=1e-6, rtol=0)


def test_single_frame_attention_is_value_projection():
    m = _layer()
    h = m.norm1(torch.randn(1, 1, 8, generator=_gen(4), dtype=torch.float64))
    ctx, w = m.attend(h)
    v = m.qkv(h)[..., 16:]
    assert torch.all(w == 1)
    torch.testing.assert_close(ctx, v)


def test_attention_permutation_equivariant():
    m = _layer(std=0.5)
    x = torch.randn(1, 6, 8, generator=_gen(5), dtype=torch.float64)
    perm = torch.randperm(6, generator=_gen(6))
    out = m(x)
    out_p = m(x[:, perm])
    inv = torch.argsort(perm)
    torch.testing.assert_close(out_p[:, inv], out, atol=1e-12, rtol=0)


def test_layer_norm_statistics():
    m = _layer()
    x = torch.randn(3, 5, 8, generator=_gen(7), dtype=torch.float64) * 4 + 2
    y = m.norm1(x)  # gain 1, bias 0 after init
    torch.testing.assert_close(y.mean(-1), torch.zeros(3, 5, dtype=torch.float64), atol=1e-6, rtol=0)
    torch.testing.assert_close(y.var(-1, unbiased=False), torch.ones(3, 5, dtype=torch.float64), atol=1e-4, rtol=0)


@pytest.mark.parametrize("t", [1, 7, 80])
def test_encode_shape(t):
    enc = build_encoder(DESK_ENCODER, 40, seed=0)
    mel = MelSpectrogram(np.random.default_rng(t).normal(size=(t, 40)), 64, 16000)
    out = encode(mel, enc)
    assert out.frames.shape == (t, DESK_ENCODER.hidden_size)
    assert np.all(np.isfinite(out.frames))


def test_constant_input_gives_identical_interior_frames():
    cfg = EncoderConfig(layer_count=2, hidden_size=16, head_count=4, conv_channels=(8, 16), conv_kernel=5)
    enc = build_encoder(cfg, 6, seed=1)
    frame = np.random.default_rng(0).normal(size=6)
    mel = MelSpectrogram(np.tile(frame, (20, 1)), 64, 16000)
    with torch.no_grad():
        h = enc.conv(torch.as_tensor(mel.frames).float()[None])[0]
    reach = 2 * (cfg.conv_kernel // 2)
    interior = h[reach:-reach]
    torch.testing.assert_close(interior, interior[:1].expand_as(interior), atol=1e-6, rtol=0)


def test_sensitivity_and_determinism():
    enc = build_encoder(DESK_ENCODER, 40, seed=2)
    x = np.random.default_rng(1).normal(size=(9, 40))
    y = x.copy()
    y[0] += 0.5
    a, b = encode(MelSpectrogram(x, 64, 16000), enc), encode(MelSpectrogram(y, 64, 16000), enc)
    assert not np.allclose(a.frames, b.frames)
    np.testing.assert_array_equal(a.frames, encode(MelSpectrogram(x, 64, 16000), build_encoder(DESK_ENCODER, 40, seed=2)).frames)


def test_init_statistics():
    enc = build_encoder(PAPER_ENCODER, 80, seed=0)
    w = torch.cat([p.detach().flatten() for n, p in enc.named_parameters() if n.endswith("weight") and p.dim() > 1])
    assert float(w.std()) == pytest.approx(0.02, rel=0.02)
    assert all(torch.count_nonzero(p) == 0 for n, p in enc.named_parameters() if n.endswith("bias"))
    assert PAPER_ENCODER.layer_count == 12 and PAPER_ENCODER.hidden_size == 768 and PAPER_ENCODER.head_count == 12


@pytest.mark.parametrize("kwargs,key", [
    ({"hidden_size": 30, "head_count": 4}, "encoder.hidden_size"),
    ({"layer_count": 0}, "encoder.layer_count"),
])
def test_config_validation(kwargs, key):
    with pytest.raises(ConfigError, match=key):
        EncoderConfig(**kwargs).validate()
