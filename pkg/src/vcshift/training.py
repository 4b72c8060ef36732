"""Losses, gradient verification and the two-stage GAN training driver.

Stage 1 reconstructs clips of the non-parallel corpus: the source passes
through a random spectral warp before the encoder, and the speaker identity
must come from the target side of the fusion sequence. Stage 2 fine-tunes on
parallel pairs, where the reconstruction target is the other-accent
recording resampled in time onto the source frames.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import ManifestRecord, read_manifest
from .dsp import (
    DspParams,
    MelSpectrogram,
    load_waveform,
    log_mel_from_power_t,
    log_mel_t,
    mel_spectrogram,
    power_spectrogram_t,
    resample,
    warp_power,
)
from .errors import ConfigError, ManifestError, NumericError
from .pitch import F0Contour, PitchParams, estimate_f0, f0_track_t, normalize_f0

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    w_recon: float = 45.0
    w_adv: float = 1.0
    w_pitch: float = 1.0
    w_featmatch: float = 2.0

    def validate(self) -> "LossWeights":
        for name in ("w_recon", "w_adv", "w_pitch", "w_featmatch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"training.{name} must be >= 0")
        return self


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    steps: int = 2000
    batch_size: int = 4
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    adam_beta1: float = 0.8
    adam_beta2: float = 0.99
    lr_decay: float = 0.999  # per epoch
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    segment_frames: int = 32
    pitch_every: int = 5
    warp_min: float = 0.7
    warp_max: float = 1.4

    def validate(self) -> "TrainConfig":
        if self.stage not in (1, 2):
            raise ConfigError("training.stage must be 1 or 2")
        if self.steps < 1:
            raise ConfigError("training.steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be >= 1")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ConfigError("training.lr_generator and training.lr_discriminator must be positive")
        if self.segment_frames < 8:
            raise ConfigError("training.segment_frames must be >= 8")
        if self.pitch_every < 1:
            raise ConfigError("training.pitch_every must be >= 1")
        if not 0 < self.warp_min <= 1 <= self.warp_max:
            raise ConfigError("training.warp_min must be in (0, 1] and training.warp_max >= 1")
        return self


# ---------------------------------------------------------------------- losses

def _frames(x):
    if isinstance(x, MelSpectrogram):
        return torch.as_tensor(x.frames)
    return torch.as_tensor(x)


def reconstruction_loss(pred, target) -> torch.Tensor:
    """Mean squared error over every (frame, mel bin) cell."""
    pred, target = _frames(pred), _frames(target)
    if pred.shape != target.shape:
        raise ValueError(f"mel shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def _as_scale_list(scores) -> list:
    if isinstance(scores, (torch.Tensor, np.ndarray, float, int)):
        scores = [scores]
    out = [torch.as_tensor(s, dtype=torch.float64) if not isinstance(s, torch.Tensor) else s
           for s in scores]
    if not out or any(s.numel() == 0 for s in out):
        raise ValueError("empty score sequence")
    return out


class AdversarialLosses(NamedTuple):
    generator: torch.Tensor
    discriminator: torch.Tensor


def adversarial_losses(real_scores, fake_scores) -> AdversarialLosses:
    """Least-squares GAN pair, patch means averaged over scales.

    discriminator = mean (D(x) - 1)^2 + mean D(x_hat)^2
    generator     = mean (D(x_hat) - 1)^2
    """
    real, fake = _as_scale_list(real_scores), _as_scale_list(fake_scores)
    if len(real) != len(fake):
        raise ValueError("real and fake score lists have different scale counts")
    d = sum(torch.mean((r - 1) ** 2) + torch.mean(f ** 2) for r, f in zip(real, fake)) / len(real)
    g = sum(torch.mean((f - 1) ** 2) for f in fake) / len(fake)
    return AdversarialLosses(g, d)


def adversarial_loss_literal(real_scores, fake_scores) -> torch.Tensor:
    """The single-expression form mean (D(x_hat) - 1)^2 + mean (D(x) - 0)^2.
    Evaluation only; training uses :func:`adversarial_losses`."""
    real, fake = _as_scale_list(real_scores), _as_scale_list(fake_scores)
    return sum(torch.mean((f - 1) ** 2) + torch.mean(r ** 2) for r, f in zip(real, fake)) / len(real)


def feature_matching_loss(real_feats, fake_feats) -> torch.Tensor:
    """L1 between discriminator feature maps: sum over layers, mean over scales."""
    total = 0.0
    for rf, ff in zip(real_feats, fake_feats):
        total = total + sum(torch.mean(torch.abs(r.detach() - f)) for r, f in zip(rf, ff))
    return total / len(real_feats)


def pitch_consistency_loss_t(pred_f0, pred_voiced, target_f0, target_voiced, warn: bool = True):
    """Mean |pred - target| over frames voiced in both contours (0 if none)."""
    if pred_f0.shape != target_f0.shape:
        raise ValueError(f"f0 lengths differ: {tuple(pred_f0.shape)} vs {tuple(target_f0.shape)}")
    mask = pred_voiced & target_voiced
    if not bool(mask.any()):
        if warn:
            log.warning("pitch consistency loss: no co-voiced frames, returning 0")
        return pred_f0.sum() * 0.0
    return torch.abs(pred_f0 - target_f0)[mask].mean()


def pitch_consistency_loss(pred: F0Contour, target: F0Contour) -> float:
    if len(pred) != len(target):
        raise ValueError(f"f0 lengths differ: {len(pred)} vs {len(target)}")
    return float(pitch_consistency_loss_t(torch.from_numpy(pred.f0_hz), torch.from_numpy(pred.voiced),
                                          torch.from_numpy(target.f0_hz), torch.from_numpy(target.voiced)))


@dataclass
class LossParts:
    recon: object = 0.0
    adv: object = 0.0
    pitch: object = 0.0
    featmatch: object = 0.0


def total_generator_loss(parts: LossParts, weights: LossWeights = LossWeights()):
    return (weights.w_recon * parts.recon + weights.w_adv * parts.adv
            + weights.w_pitch * parts.pitch + weights.w_featmatch * parts.featmatch)


# --------------------------------------------------------- gradient verification

def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    scale = max(float(analytic.norm()), float(numeric.norm()))
    if scale == 0.0:
        return 0.0
    return float((analytic - numeric).norm()) / scale


def finite_difference_check(fn: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor],
                            eps: float = 1e-5, max_coords: int | None = None,
                            seed: int = 0) -> float:
    """Compare autograd gradients of scalar ``fn()`` w.r.t. ``tensors`` with
    central differences. Returns the worst per-tensor relative error.

    ``tensors`` must be float64 leaves with ``requires_grad``. With
    ``max_coords`` only that many randomly chosen coordinates per tensor are
    probed.
    """
    tensors = list(tensors)
    for t in tensors:
        if t.dtype != torch.float64:
            raise TypeError("finite-difference checks need float64 tensors")
    grads = torch.autograd.grad(fn(), tensors, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            g = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            coords = np.arange(flat.numel())
            if max_coords is not None and coords.size > max_coords:
                coords = rng.choice(coords, max_coords, replace=False)
            numeric = torch.empty(len(coords), dtype=torch.float64)
            for j, c in enumerate(coords):
                orig = flat[c].item()
                flat[c] = orig + eps
                up = float(fn())
                flat[c] = orig - eps
                down = float(fn())
                flat[c] = orig
                numeric[j] = (up - down) / (2 * eps)
            worst = max(worst, relative_error(g.reshape(-1)[coords], numeric))
    return worst


# ------------------------------------------------------------------ data side

@dataclass
class ClipFeatures:
    record: ManifestRecord
    samples: np.ndarray  # float32
    mel: np.ndarray  # (T, M) float32
    f0: F0Contour
    f0_channels: np.ndarray  # (T, 2) float32
    median_log_f0: float


def clip_features(record: ManifestRecord, dsp: DspParams, pitch: PitchParams) -> ClipFeatures:
    w = load_waveform(record.path)
    if w.sample_rate != dsp.sample_rate:
        w = resample(w, dsp.sample_rate)
    mel = mel_spectrogram(w, dsp)
    f0 = estimate_f0(w, pitch, dsp.hop_length, frame_length=dsp.win_length)
    n = min(len(mel), len(f0))
    f0 = f0.truncate(n)
    med = f0.median()
    if not math.isfinite(med):
        raise ManifestError(f"{record.path}: no voiced frames")
    return ClipFeatures(record, w.samples.astype(np.float32), mel.frames[:n].astype(np.float32), f0,
                        normalize_f0(f0).astype(np.float32), math.log(med))


@dataclass
class Batch:
    src_mel: torch.Tensor  # (B, S, M), warped
    src_f0: torch.Tensor  # (B, S, 2)
    voice_idx: torch.Tensor  # (B,)
    level: torch.Tensor  # (B,) median log-f0 of the reconstruction target
    ref_mel: torch.Tensor | None  # (B, S, M) reference-mode target audio
    ref_f0: torch.Tensor | None
    target_mel: torch.Tensor  # (B, S - k, M)
    target_f0: torch.Tensor  # (B, S - k)
    target_voiced: torch.Tensor
    real: torch.Tensor  # (B, S * hop)


@dataclass
class _Pair:
    src: ClipFeatures
    tgt: ClipFeatures
    mel: np.ndarray  # target mel on the source frame grid
    f0: np.ndarray
    voiced: np.ndarray


def _time_align(src: ClipFeatures, tgt: ClipFeatures) -> _Pair:
    ts, tt = len(src.mel), len(tgt.mel)
    pos = np.arange(ts) * (tt - 1) / max(ts - 1, 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, tt - 1)
    frac = (pos - lo)[:, None]
    mel = (tgt.mel[lo] * (1 - frac) + tgt.mel[hi] * frac).astype(np.float32)
    near = np.rint(pos).astype(int)
    return _Pair(src, tgt, mel, tgt.f0.f0_hz[near], tgt.f0.voiced[near])


class BatchSampler:
    """Draws seeded random crops. Stage 1 pairs a clip with itself (and with
    another clip of the same speaker for reference-mode targets); stage 2
    draws ordered parallel pairs."""

    def __init__(self, clips: list[ClipFeatures], cfg, voice_keys: list[str], stage: int, seed: int):
        self.cfg = cfg
        self.dsp: DspParams = cfg.dsp
        self.train: TrainConfig = cfg.training
        self.voice_keys = voice_keys
        self.rng = np.random.default_rng(seed)
        self.by_speaker: dict[str, list[ClipFeatures]] = {}
        for c in clips:
            self.by_speaker.setdefault(c.record.speaker_id, []).append(c)
        s = self.train.segment_frames
        if stage == 1:
            self.pairs = [_Pair(c, c, c.mel, c.f0.f0_hz, c.f0.voiced) for c in clips if len(c.mel) >= s]
        else:
            groups: dict[str, list[ClipFeatures]] = {}
            for c in clips:
                if c.record.pair_id:
                    groups.setdefault(c.record.pair_id, []).append(c)
            self.pairs = [_time_align(a, b) for g in groups.values() for a in g for b in g
                          if a is not b and len(a.mel) >= s]
        if not self.pairs:
            raise ManifestError(f"no usable training items for stage {stage} "
                                f"(clips must have >= {s} frames{'; parallel pairs needed' if stage == 2 else ''})")

    def __len__(self):
        return len(self.pairs)

    def sample(self) -> Batch:
        p, t = self.dsp, self.train
        s, hop = t.segment_frames, p.hop_length
        lead = (p.win_length - hop) // hop  # frames lost at each end of generated audio
        fields = {k: [] for k in ("src_mel", "src_f0", "voice_idx", "level", "ref_mel", "ref_f0",
                                  "target_mel", "target_f0", "target_voiced", "real")}
        for _ in range(t.batch_size):
            pair = self.pairs[self.rng.integers(len(self.pairs))]
            src, tgt = pair.src, pair.tgt
            s0 = int(self.rng.integers(len(src.mel) - s + 1))
            ratio = math.exp(self.rng.uniform(math.log(t.warp_min), math.log(t.warp_max)))
            seg = torch.from_numpy(src.samples[s0 * hop: s0 * hop + (s - 1) * hop + p.win_length]).double()
            power = warp_power(power_spectrogram_t(seg, p), ratio, p)
            fields["src_mel"].append(log_mel_from_power_t(power, p).float())
            fields["src_f0"].append(torch.from_numpy(src.f0_channels[s0:s0 + s]))
            fields["voice_idx"].append(self.voice_keys.index(tgt.record.speaker_id))
            fields["level"].append(tgt.median_log_f0)

            refs = [c for c in self.by_speaker[tgt.record.speaker_id] if c is not tgt] or [tgt]
            ref = refs[self.rng.integers(len(refs))]
            r0 = int(self.rng.integers(max(len(ref.mel) - s, 0) + 1))
            fields["ref_mel"].append(torch.from_numpy(_pad_rows(ref.mel[r0:r0 + s], s)))
            fields["ref_f0"].append(torch.from_numpy(_pad_rows(ref.f0_channels[r0:r0 + s], s)))

            a, b = s0 + lead // 2, s0 + s - (lead - lead // 2)
            fields["target_mel"].append(torch.from_numpy(pair.mel[a:b]))
            fields["target_f0"].append(torch.from_numpy(pair.f0[a:b]))
            fields["target_voiced"].append(torch.from_numpy(pair.voiced[a:b]))
            if tgt is src:
                start = (s0 + lead // 2) * hop
            else:
                start = int(self.rng.integers(len(tgt.samples) - s * hop + 1))
            fields["real"].append(torch.from_numpy(tgt.samples[start:start + s * hop]))
        stack = {k: torch.stack(v) for k, v in fields.items() if k not in ("voice_idx", "level")}
        return Batch(
            src_mel=stack["src_mel"], src_f0=stack["src_f0"],
            voice_idx=torch.tensor(fields["voice_idx"]),
            level=torch.tensor(fields["level"], dtype=torch.float32),
            ref_mel=stack["ref_mel"], ref_f0=stack["ref_f0"],
            target_mel=stack["target_mel"], target_f0=stack["target_f0"].float(),
            target_voiced=stack["target_voiced"], real=stack["real"],
        )


def _pad_rows(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    reps = -(-n // len(x))
    return np.concatenate([x] * reps)[:n]


# -------------------------------------------------------------------- driver

HISTORY_FIELDS = ("step", "L_recon", "L_adv_gen", "L_adv_disc", "L_pitch", "L_fm", "total")


@dataclass
class TrainResult:
    model: object
    discriminators: object
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _scalar(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def _check_finite(step: int, **values) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise NumericError(f"non-finite loss at step {step}: " + ", ".join(f"{k}={v}" for k, v in bad.items()))


def generator_forward(model, batch: Batch, mode: str) -> torch.Tensor:
    fusion = model.fuse_training(batch, mode)
    return model.generator(fusion.frames)


def run_training(stage: int, manifest, cfg, resume=None, out_dir=None,
                 progress: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Train for ``cfg.training.steps`` alternating discriminator/generator steps.

    ``resume`` is a loaded checkpoint state (see :mod:`vcshift.checkpoint`);
    stage 2 requires one. Writes ``loss_history.csv`` and checkpoints under
    ``out_dir`` when given.
    """
    from .checkpoint import save_checkpoint
    from .model import build_discriminators_for, build_model

    t: TrainConfig = cfg.training.validate()
    weights: LossWeights = cfg.losses.validate()
    if stage not in (1, 2):
        raise ConfigError("training.stage must be 1 or 2")
    if stage == 2 and resume is None:
        raise ConfigError("stage 2 fine-tuning requires a stage-1 checkpoint")

    records = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    if stage == 2 and not any(r.pair_id for r in records):
        raise ManifestError("stage 2 needs a parallel manifest (pair_id column filled)")
    clips = [clip_features(r, cfg.dsp, cfg.pitch) for r in records]
    voices = sorted({c.record.speaker_id for c in clips})

    if resume is not None:
        model, disc = resume.model, resume.discriminators
        model.speakers.add(voices, torch.Generator().manual_seed(t.seed + 17))
        rng_seed = t.seed + 1000 * stage
    else:
        model = build_model(cfg, voices, seed=t.seed)
        disc = build_discriminators_for(cfg, seed=t.seed + 1)
        rng_seed = t.seed
    stats: dict[str, list[float]] = {}
    for c in clips:
        stats.setdefault(c.record.speaker_id, []).append(c.median_log_f0)
    model.speaker_log_f0.update({k: float(np.median(v)) for k, v in stats.items()})

    sampler = BatchSampler(clips, cfg, model.speakers.keys, stage, rng_seed)
    mode = cfg.fusion.target_mode
    g_params = [p for p in model.parameters() if p.requires_grad]
    d_params = list(disc.parameters())
    opt_g = torch.optim.Adam(g_params, lr=t.lr_generator, betas=(t.adam_beta1, t.adam_beta2))
    opt_d = torch.optim.Adam(d_params, lr=t.lr_discriminator, betas=(t.adam_beta1, t.adam_beta2))
    sched_g = torch.optim.lr_scheduler.ExponentialLR(opt_g, t.lr_decay)
    sched_d = torch.optim.lr_scheduler.ExponentialLR(opt_d, t.lr_decay)
    epoch_steps = max(1, math.ceil(len(sampler) / t.batch_size))

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model, disc)
    held_pitch = 0.0
    start_step = model.step
    model.train()
    disc.train()
    for i in range(1, t.steps + 1):
        step = start_step + i
        batch = sampler.sample()
        fake = generator_forward(model, batch, mode)

        # discriminator step
        disc.requires_grad_(True)
        real_out = disc(batch.real)
        fake_out = disc(fake.detach())
        _, l_disc = adversarial_losses([s for s, _ in real_out], [s for s, _ in fake_out])
        opt_d.zero_grad(set_to_none=True)
        l_disc.backward()
        opt_d.step()

        # generator step
        disc.requires_grad_(False)
        fake_out = disc(fake)
        with torch.no_grad():
            real_out = disc(batch.real)
        l_adv, _ = adversarial_losses([s for s, _ in real_out], [s for s, _ in fake_out])
        l_fm = feature_matching_loss([f for _, f in real_out], [f for _, f in fake_out])
        l_recon = reconstruction_loss(log_mel_t(fake, cfg.dsp), batch.target_mel)
        if i % t.pitch_every == 1 or t.pitch_every == 1:
            f0, voiced = f0_track_t(fake, cfg.dsp.sample_rate, cfg.pitch, cfg.dsp.hop_length,
                                    frame_length=cfg.dsp.win_length)
            l_pitch = pitch_consistency_loss_t(f0, voiced, batch.target_f0, batch.target_voiced, warn=False)
            held_pitch = float(l_pitch.detach())
        else:
            l_pitch = held_pitch
        parts = LossParts(l_recon, l_adv, l_pitch, l_fm)
        total = total_generator_loss(parts, weights)
        row = {
            "step": step, "L_recon": _scalar(l_recon), "L_adv_gen": _scalar(l_adv),
            "L_adv_disc": _scalar(l_disc), "L_pitch": _scalar(l_pitch), "L_fm": _scalar(l_fm),
            "total": _scalar(total),
        }
        _check_finite(step, **{k: v for k, v in row.items() if k != "step"})
        opt_g.zero_grad(set_to_none=True)
        total.backward()
        opt_g.step()
        result.history.append(row)
        if i % epoch_steps == 0:
            sched_g.step()
            sched_d.step()
        if progress is not None:
            progress(step, row)
        model.step = step
        if out_dir is not None and t.checkpoint_every and i % t.checkpoint_every == 0 and i != t.steps:
            path = out_dir / f"checkpoint_stage{stage}_step{step:06d}.vckp"
            save_checkpoint(path, model, disc, cfg, stage=stage, rng_state=sampler.rng.bit_generator.state)
            result.checkpoints.append(path)

    model.eval()
    disc.eval()
    disc.requires_grad_(True)
    if out_dir is not None:
        write_history(result.history, out_dir / "loss_history.csv")
        path = out_dir / f"checkpoint_stage{stage}.vckp"
        save_checkpoint(path, model, disc, cfg, stage=stage, rng_state=sampler.rng.bit_generator.state)
        result.checkpoints.append(path)
    return result


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (row[k] if k == "step" else f"{row[k]:.9g}") for k in HISTORY_FIELDS})


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
