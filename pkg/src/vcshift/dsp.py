"""Audio ingestion, standardization and log-mel feature extraction.

Framing convention: no padding. Frame ``t`` covers samples
``[t * hop, t * hop + win_length)``, so a signal of ``n`` samples yields
``1 + (n - win_length) // hop`` frames.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from scipy import signal

from .errors import (
    ConfigError,
    MalformedWavError,
    TooShortError,
    UnsupportedEncodingError,
    WavNotFoundError,
)

LOG_FLOOR = 1e-5

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class DspParams:
    sample_rate: int = 16000
    fft_size: int = 512
    win_length: int = 256
    hop_length: int = 64
    mel_count: int = 40
    fmin: float = 40.0
    fmax: float = 7600.0

    def validate(self) -> "DspParams":
        if self.sample_rate <= 0:
            raise ConfigError("dsp.sample_rate must be positive")
        if not self.hop_length <= self.win_length:
            raise ConfigError("dsp.hop_length must not exceed dsp.win_length")
        if not self.win_length <= self.fft_size:
            raise ConfigError("dsp.win_length must not exceed dsp.fft_size")
        if self.hop_length < 1 or self.mel_count < 1:
            raise ConfigError("dsp.hop_length and dsp.mel_count must be >= 1")
        if not 0 <= self.fmin < self.fmax:
            raise ConfigError("dsp.fmin must be below dsp.fmax")
        if self.fmax > self.sample_rate / 2:
            raise ConfigError("dsp.fmax must not exceed dsp.sample_rate / 2")
        return self

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            return 0
        return 1 + (n_samples - self.win_length) // self.hop_length


DESK_DSP = DspParams()
PAPER_DSP = DspParams(sample_rate=44100, fft_size=1024, win_length=512, hop_length=64,
                      mel_count=80, fmin=40.0, fmax=16000.0)


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, M) natural-log mel energies
    frame_hop: int
    sample_rate: int

    @property
    def mel_count(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


# --------------------------------------------------------------------- WAV I/O

def load_waveform(path) -> Waveform:
    """Read a PCM16 or float32 RIFF/WAVE file, averaging channels to mono."""
    path = Path(path)
    if not path.is_file():
        raise WavNotFoundError(f"no such WAV file: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: missing RIFF/WAVE header")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE:
                if size < 40:
                    raise MalformedWavError(f"{path}: extensible fmt chunk too short")
                (sub,) = struct.unpack("<H", body[24:26])
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _, _, bits = fmt
    if channels < 1 or rate < 1:
        raise MalformedWavError(f"{path}: invalid channel count or rate")
    if tag == _PCM and bits == 16:
        raw = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2")
        x = raw.astype(np.float64) / 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4")
        x = raw.astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise MalformedWavError(f"{path}: non-finite float samples")
    else:
        raise UnsupportedEncodingError(f"{path}: format tag {tag} with {bits} bits is not supported")

    x = x[: x.size // channels * channels].reshape(-1, channels).mean(axis=1)
    return Waveform(np.clip(x, -1.0, 1.0), rate)


def save_waveform(w: Waveform, path, encoding: str = "pcm16") -> None:
    """Write mono WAV; samples are clipped to [-1, 1]."""
    x = np.clip(w.samples, -1.0, 1.0)
    if encoding == "pcm16":
        body = np.round(x * 32767.0).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    elif encoding == "float32":
        body = x.astype("<f4").tobytes()
        tag, bits = _IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, tag, 1, w.sample_rate,
                                    w.sample_rate * block, block, bits)
    header += b"data" + struct.pack("<I", len(body))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + body)


# ------------------------------------------------------------ standardization

@functools.lru_cache(maxsize=32)
def _resample_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    half_len = 24 * max_rate
    # cutoff at 90% of the lower Nyquist
    return signal.firwin(2 * half_len + 1, 0.9 / max_rate, window=("kaiser", 9.0))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Windowed-sinc polyphase resampling (Kaiser window)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(int(target_rate), w.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    y = signal.resample_poly(w.samples, up, down, window=_resample_filter(up, down))
    return Waveform(y, target_rate)


def slice_clips(w: Waveform, clip_seconds: float = 5.0, min_tail_seconds: float = 0.5) -> list[Waveform]:
    """Cut into fixed-length clips. A trailing remainder shorter than
    ``min_tail_seconds`` is dropped, otherwise kept as a short final clip."""
    if clip_seconds <= 0:
        raise ValueError("clip_seconds must be positive")
    size = int(round(clip_seconds * w.sample_rate))
    min_tail = int(round(min_tail_seconds * w.sample_rate))
    clips = []
    for start in range(0, len(w), size):
        chunk = w.samples[start:start + size]
        if chunk.size < size and chunk.size < min_tail:
            break
        clips.append(Waveform(chunk.copy(), w.sample_rate))
    return clips


def standardize(w: Waveform, p: DspParams) -> Waveform:
    """Resample to the working rate and clip to [-1, 1]."""
    w = resample(w, p.sample_rate)
    return Waveform(np.clip(w.samples, -1.0, 1.0), w.sample_rate)


# ---------------------------------------------------------------- mel features

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(p: DspParams) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(p.fmin), hz_to_mel(p.fmax), p.mel_count + 2))
    return edges[1:-1]


@functools.lru_cache(maxsize=16)
def _filterbank(p: DspParams) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(p.fmin), hz_to_mel(p.fmax), p.mel_count + 2))
    freqs = np.arange(p.fft_size // 2 + 1) * p.sample_rate / p.fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(p: DspParams) -> np.ndarray:
    """Triangular HTK-scale filters, shape (mel_count, fft_size // 2 + 1)."""
    return _filterbank(p).copy()


@functools.lru_cache(maxsize=16)
def _window(win_length: int) -> np.ndarray:
    return signal.get_window("hann", win_length, fftbins=True)


def power_spectrogram_t(x: torch.Tensor, p: DspParams) -> torch.Tensor:
    """|STFT|^2 of ``x`` (..., N) -> (..., T, fft_size // 2 + 1). Differentiable."""
    frames = x.unfold(-1, p.win_length, p.hop_length)
    window = torch.tensor(_window(p.win_length), dtype=x.dtype)
    spec = torch.fft.rfft(frames * window, n=p.fft_size)
    return spec.real ** 2 + spec.imag ** 2


def log_mel_from_power_t(power: torch.Tensor, p: DspParams) -> torch.Tensor:
    fb = torch.tensor(_filterbank(p), dtype=power.dtype)
    return torch.log(torch.clamp(power @ fb.T, min=LOG_FLOOR))


def log_mel_t(x: torch.Tensor, p: DspParams) -> torch.Tensor:
    """Log-mel of a waveform tensor (..., N) -> (..., T, M). Differentiable."""
    if x.shape[-1] < p.win_length:
        raise TooShortError(f"need at least {p.win_length} samples, got {x.shape[-1]}")
    return log_mel_from_power_t(power_spectrogram_t(x, p), p)


def mel_spectrogram(w: Waveform, p: DspParams = DESK_DSP) -> MelSpectrogram:
    if len(w) < p.win_length:
        raise TooShortError(f"need at least {p.win_length} samples, got {len(w)}")
    with torch.no_grad():
        frames = log_mel_t(torch.from_numpy(w.samples), p).numpy()
    return MelSpectrogram(frames, p.hop_length, w.sample_rate)


def warp_power(power: torch.Tensor, ratio: float, p: DspParams) -> torch.Tensor:
    """Scale the frequency axis of a power spectrogram by ``ratio`` (>1 moves
    energy up). Linear interpolation between bins; bins mapped past Nyquist are zero."""
    n_bins = power.shape[-1]
    src = torch.arange(n_bins, dtype=power.dtype) / ratio
    lo = src.floor().long().clamp(max=n_bins - 1)
    hi = (lo + 1).clamp(max=n_bins - 1)
    frac = src - lo.to(power.dtype)
    out = power[..., lo] * (1 - frac) + power[..., hi] * frac
    return torch.where(src <= n_bins - 1, out, torch.zeros_like(out))


# ------------------------------------------------------------------- exporting

def write_mel_csv(mel: MelSpectrogram, path) -> None:
    np.savetxt(path, mel.frames, delimiter=",", fmt="%.6f")


def write_mel_pgm(mel: MelSpectrogram, path) -> None:
    """8-bit binary PGM; time runs left to right, low mel bins at the bottom."""
    img = mel.frames.T[::-1]
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = np.round((img - lo) * scale).astype(np.uint8)
    height, width = pix.shape
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode() + pix.tobytes())

