"""End-to-end conversion: dsp -> pitch (shift/scale) -> encode -> fuse -> generate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from .dsp import MelSpectrogram, Waveform, mel_spectrogram, save_waveform, standardize, write_mel_pgm
from .errors import DataError, TooShortError
from .fusion import FusionSequence, ReferenceTarget, SpeakerTarget, align_frames, fuse
from .pitch import F0Contour, auto_match_scale, estimate_f0, shift_scale_f0, write_f0_csv

log = logging.getLogger(__name__)


@dataclass
class ConversionResult:
    waveform: Waveform
    source_f0: F0Contour  # as estimated from the source
    fused_f0: F0Contour  # after shift/scale; this is what fusion sees
    fusion: FusionSequence
    mel: MelSpectrogram  # of the converted output


@dataclass
class _Features:
    wave: Waveform
    mel: MelSpectrogram
    f0: F0Contour


def analyze(w: Waveform, cfg) -> _Features:
    w = standardize(w, cfg.dsp)
    if len(w) < max(cfg.dsp.win_length, cfg.pitch.window):
        raise TooShortError(f"audio has {len(w)} samples; need at least "
                            f"{max(cfg.dsp.win_length, cfg.pitch.window)}")
    mel = mel_spectrogram(w, cfg.dsp)
    f0 = estimate_f0(w, cfg.pitch, cfg.dsp.hop_length, frame_length=cfg.dsp.win_length)
    return _Features(w, mel, f0)


def _embed(mel: MelSpectrogram, model) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model.encoder(torch.as_tensor(mel.frames, dtype=dtype).unsqueeze(0))[0]


def target_median_hz(target, model, cfg) -> float:
    if isinstance(target, str):
        model.speakers.index(target)  # raises UnknownSpeakerError
        if target not in model.speaker_log_f0:
            raise DataError(f"no pitch statistics stored for speaker {target!r}")
        return math.exp(model.speaker_log_f0[target])
    med = analyze(target, cfg).f0.median()
    if not math.isfinite(med):
        raise DataError("reference audio has no voiced frames")
    return med


def convert(source: Waveform, target, model, cfg, semitones: float = 0.0, scale: float = 1.0,
            auto_match: bool = False) -> ConversionResult:
    """Convert ``source`` towards ``target``: a speaker id (speaker table) or a
    reference :class:`Waveform` (reference mode).

    The f0 options act on the source contour before fusion. In speaker-id
    mode the target pitch-level channel then carries the shifted contour's
    median log-f0, so the shift reaches the generator; without f0 options it
    carries the target speaker's stored median.
    """
    src = analyze(source, cfg)
    f0_opts = auto_match or semitones != 0.0 or scale != 1.0
    if auto_match:
        scale = scale * auto_match_scale(src.f0, target_median_hz(target, model, cfg))
    fused_f0 = shift_scale_f0(src.f0, semitones, scale, cfg.pitch) if f0_opts else src.f0

    emb = _embed(src.mel, model)
    emb, src_channels = align_frames(emb, fused_f0)
    n = emb.shape[0]
    fused_f0 = fused_f0.truncate(n)
    dtype = emb.dtype
    if isinstance(target, str):
        idx = model.speakers.index(target)
        if target in model.speaker_log_f0 and not f0_opts:
            level = model.speaker_log_f0[target]
        elif fused_f0.voiced.any():
            level = math.log(fused_f0.median())
        else:
            level = 0.0
        with torch.no_grad():
            tgt = SpeakerTarget(model.speakers.weight[idx].to(dtype), torch.tensor(level, dtype=dtype))
            fusion = fuse(emb, torch.as_tensor(src_channels, dtype=dtype), tgt)
    else:
        ref = analyze(target, cfg)
        ref_emb, ref_channels = align_frames(_embed(ref.mel, model), ref.f0)
        ref_emb = _fit_length(ref_emb, n)
        ref_channels = _fit_length(torch.as_tensor(ref_channels, dtype=dtype), n)
        with torch.no_grad():
            fusion = fuse(emb, torch.as_tensor(src_channels, dtype=dtype), ReferenceTarget(ref_emb, ref_channels))
    with torch.no_grad():
        wav = model.generator(fusion.frames.unsqueeze(0))[0]
    out = Waveform(wav.double().numpy(), cfg.dsp.sample_rate)
    return ConversionResult(out, src.f0.truncate(n), fused_f0, fusion, mel_spectrogram(out, cfg.dsp))


def _fit_length(x: torch.Tensor, n: int) -> torch.Tensor:
    """Tile or crop a reference sequence to ``n`` frames."""
    if x.shape[0] >= n:
        return x[:n]
    reps = -(-n // x.shape[0])
    return x.repeat(reps, *([1] * (x.dim() - 1)))[:n]


def write_outputs(result: ConversionResult, wav_path, mel_pgm=None, f0_csv=None) -> None:
    save_waveform(result.waveform, wav_path)
    if mel_pgm is not None:
        write_mel_pgm(result.mel, mel_pgm)
    if f0_csv is not None:
        write_f0_csv(result.fused_f0, f0_csv)
    log.info("wrote %s (%d samples)", Path(wav_path), len(result.waveform))


__all__ = ["ConversionResult", "analyze", "convert", "target_median_hz", "write_outputs"]
