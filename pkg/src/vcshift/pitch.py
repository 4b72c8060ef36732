"""YIN f0 estimation, f0 normalization and inference-time pitch shifting.

The estimator runs in torch so the same code serves two callers: plain
contour extraction (under ``no_grad``) and the pitch-consistency loss, where
the parabolic refinement step keeps a gradient path back to the samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dsp import Waveform
from .errors import ConfigError, TooShortError

SIGMA_GUARD = 1e-8


@dataclass(frozen=True)
class PitchParams:
    f_floor: float = 65.0
    f_ceiling: float = 1047.0
    yin_threshold: float = 0.15
    window: int = 640

    def validate(self, sample_rate: int | None = None) -> "PitchParams":
        if not 0 < self.f_floor < self.f_ceiling:
            raise ConfigError("pitch.f_floor must be positive and below pitch.f_ceiling")
        if sample_rate is not None and self.f_ceiling > sample_rate / 2:
            raise ConfigError("pitch.f_ceiling must not exceed dsp.sample_rate / 2")
        if not 0 < self.yin_threshold < 1:
            raise ConfigError("pitch.yin_threshold must lie in (0, 1)")
        if sample_rate is not None and self.window <= 2 * self.max_lag(sample_rate):
            raise ConfigError("pitch.window too short for pitch.f_floor at this sample rate")
        return self

    def min_lag(self, sample_rate: int) -> int:
        return max(2, int(math.floor(sample_rate / self.f_ceiling)))

    def max_lag(self, sample_rate: int) -> int:
        return int(math.ceil(sample_rate / self.f_floor))


@dataclass
class F0Contour:
    f0_hz: np.ndarray
    voiced: np.ndarray
    frame_hop: int
    sample_rate: int

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64).reshape(-1)
        self.voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if self.f0_hz.shape != self.voiced.shape:
            raise ValueError("f0_hz and voiced must have equal length")
        if np.any((self.f0_hz == 0) == self.voiced):
            raise ValueError("f0_hz must be zero exactly on unvoiced frames")

    def __len__(self):
        return self.f0_hz.size

    def median(self) -> float:
        """Median voiced f0 in Hz, NaN when nothing is voiced."""
        if not self.voiced.any():
            return float("nan")
        return float(np.median(self.f0_hz[self.voiced]))

    def truncate(self, n: int) -> "F0Contour":
        return F0Contour(self.f0_hz[:n], self.voiced[:n], self.frame_hop, self.sample_rate)


def _analysis_frames(x: torch.Tensor, hop: int, frame_length: int, window: int) -> torch.Tensor:
    # frame t is centred on sample t * hop + frame_length // 2, like the mel frames
    n = x.shape[-1]
    count = 1 + (n - frame_length) // hop
    padded = torch.nn.functional.pad(x, (window, window))
    first = window + frame_length // 2 - window // 2
    segs = padded[..., first:].unfold(-1, window, hop)
    return segs[..., :count, :]


def difference_function(frames: torch.Tensor, max_lag: int) -> torch.Tensor:
    """YIN difference d(tau) for tau = 0..max_lag over each frame's first
    ``window - max_lag`` samples."""
    window = frames.shape[-1]
    span = window - max_lag
    size = 1 << (window + span).bit_length()
    spec_head = torch.fft.rfft(frames[..., :span], n=size)
    spec_full = torch.fft.rfft(frames, n=size)
    corr = torch.fft.irfft(spec_head.conj() * spec_full, n=size)[..., : max_lag + 1]
    csum = torch.nn.functional.pad(torch.cumsum(frames ** 2, dim=-1), (1, 0))
    lags = torch.arange(max_lag + 1)
    shifted_energy = csum[..., lags + span] - csum[..., lags]
    return csum[..., span : span + 1] + shifted_energy - 2.0 * corr


def cumulative_mean_normalized(d: torch.Tensor) -> torch.Tensor:
    lags = torch.arange(1, d.shape[-1], dtype=d.dtype)
    running = torch.cumsum(d[..., 1:], dim=-1)
    safe = torch.where(running > 0, running, torch.ones_like(running))
    cmnd = torch.where(running > 0, d[..., 1:] * lags / safe, torch.ones_like(running))
    return torch.cat([torch.ones_like(d[..., :1]), cmnd], dim=-1)


def f0_track_t(x: torch.Tensor, sample_rate: int, p: PitchParams = PitchParams(),
               hop: int = 64, frame_length: int | None = None):
    """YIN over a batch of waveforms ``x`` (..., N).

    Returns ``(f0, voiced)``, both shaped (..., T). ``f0`` is zero on unvoiced
    frames and differentiable w.r.t. ``x`` through the parabolic refinement.
    """
    frame_length = p.window if frame_length is None else frame_length
    lo, hi = p.min_lag(sample_rate), p.max_lag(sample_rate)
    frames = _analysis_frames(x, hop, frame_length, p.window)
    d = difference_function(frames, hi + 1)
    with torch.no_grad():
        cmnd = cumulative_mean_normalized(d)
        band = cmnd[..., lo : hi + 1]
        below = band < p.yin_threshold
        has_dip = below.any(dim=-1)
        first = torch.argmax(below.to(torch.int8), dim=-1)
        # walk from the first sub-threshold lag to the bottom of its dip
        idx = torch.arange(band.shape[-1])
        rising = torch.cat([band[..., 1:] >= band[..., :-1], torch.ones_like(below[..., :1])], dim=-1)
        stop = rising & (idx >= first.unsqueeze(-1))
        tau = lo + torch.argmax(stop.to(torch.int8), dim=-1)
        has_dip &= frames.pow(2).mean(dim=-1) > 1e-12

    tau_c = tau.unsqueeze(-1)
    left = torch.gather(d, -1, tau_c - 1).squeeze(-1)
    mid = torch.gather(d, -1, tau_c).squeeze(-1)
    right = torch.gather(d, -1, tau_c + 1).squeeze(-1)
    curvature = left - 2.0 * mid + right
    safe = torch.where(curvature > 0, curvature, torch.ones_like(curvature))
    shift = torch.where(curvature > 0, (left - right) / (2.0 * safe), torch.zeros_like(curvature))
    shift = shift.clamp(-1.0, 1.0)
    f0 = sample_rate / (tau.to(d.dtype) + shift)
    with torch.no_grad():
        voiced = has_dip & (f0 >= p.f_floor) & (f0 <= p.f_ceiling)
    f0 = torch.where(voiced, f0, torch.zeros_like(f0))
    return f0, voiced


def estimate_f0(w: Waveform, p: PitchParams = PitchParams(), hop: int = 64,
                frame_length: int | None = None) -> F0Contour:
    """YIN contour with one estimate per ``hop``.

    Pass the mel ``win_length`` as ``frame_length`` to get frames aligned 1:1
    with the mel-spectrogram of the same waveform.
    """
    if len(w) < p.window:
        raise TooShortError(f"need at least {p.window} samples for f0, got {len(w)}")
    if frame_length is not None and len(w) < frame_length:
        raise TooShortError(f"need at least {frame_length} samples, got {len(w)}")
    with torch.no_grad():
        f0, voiced = f0_track_t(torch.from_numpy(w.samples), w.sample_rate, p, hop, frame_length)
    return F0Contour(f0.numpy(), voiced.numpy(), hop, w.sample_rate)


def shift_scale_f0(c: F0Contour, semitones: float = 0.0, scale: float = 1.0,
                   p: PitchParams = PitchParams()) -> F0Contour:
    """Map voiced f -> scale * f * 2**(semitones / 12), clamped to the
    estimator's [f_floor, f_ceiling]."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    f0 = c.f0_hz.copy()
    v = c.voiced
    f0[v] = np.clip(f0[v] * scale * 2.0 ** (semitones / 12.0), p.f_floor, p.f_ceiling)
    return F0Contour(f0, v.copy(), c.frame_hop, c.sample_rate)


def auto_match_scale(source: F0Contour, target_median_hz: float) -> float:
    """Scale factor taking the source's median voiced f0 onto ``target_median_hz``."""
    src = source.median()
    if not (math.isfinite(src) and target_median_hz > 0):
        return 1.0
    return target_median_hz / src


def normalize_f0(c: F0Contour) -> np.ndarray:
    """(T, 2) conditioning channels: standardized log-f0 over this contour's
    voiced frames (0 when unvoiced) and the voiced indicator."""
    out = np.zeros((len(c), 2))
    out[:, 1] = c.voiced
    if c.voiced.sum() < 2:
        return out
    logf = np.log(c.f0_hz[c.voiced])
    sigma = logf.std()
    if sigma < SIGMA_GUARD:
        sigma = 1.0
    out[c.voiced, 0] = (logf - logf.mean()) / sigma
    return out


def write_f0_csv(c: F0Contour, path) -> None:
    lines = ["frame_index,f0_hz,voiced"]
    lines += [f"{i},{f:.4f},{int(v)}" for i, (f, v) in enumerate(zip(c.f0_hz, c.voiced))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_f0_csv(path, frame_hop: int = 64, sample_rate: int = 16000) -> F0Contour:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return F0Contour(rows[:, 1], rows[:, 2].astype(bool), frame_hop, sample_rate)
