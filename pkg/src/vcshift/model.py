"""The trainable conversion model: encoder, speaker table and generator."""

from __future__ import annotations

import torch
from torch import nn

from .encoder import ContentEncoder, init_weights
from .fusion import FusionLayout, FusionSequence, ReferenceTarget, SpeakerTarget, SpeakerTable, fuse
from .vocoder import DiscriminatorBank, F0Channels, build_discriminators, build_generator


class VoiceModel(nn.Module):
    def __init__(self, cfg, voices, seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        hidden = cfg.encoder.hidden_size
        self.encoder = ContentEncoder(cfg.encoder, cfg.dsp.mel_count)
        init_weights(self.encoder, g)
        self.speakers = SpeakerTable(voices, cfg.fusion.resolved_dim(hidden), g)
        self.layout = FusionLayout.build(hidden, cfg.fusion.resolved_dim(hidden))
        f0_channels = None
        if cfg.fusion.target_mode == "speaker_id":
            # absolute pitch is only recoverable when the target side carries a pitch level
            f0_channels = F0Channels(self.layout.span("source_f0").start, self.layout.span("source_f0").start + 1,
                                     self.layout.span("target_f0").start, cfg.dsp.sample_rate)
        self.generator = build_generator(cfg.generator, self.layout.width, seed=seed + 7, f0_channels=f0_channels)
        self.freeze_target_path = cfg.encoder.freeze_target_path
        self.speaker_log_f0: dict[str, float] = {}
        self.step = 0

    def fuse_training(self, batch, mode: str) -> FusionSequence:
        src = self.encoder(batch.src_mel)
        if mode == "speaker_id":
            target = SpeakerTarget(self.speakers(batch.voice_idx), batch.level)
        else:
            ref = self.encoder(batch.ref_mel)
            if self.freeze_target_path:
                ref = ref.detach()
            target = ReferenceTarget(ref, batch.ref_f0)
        return fuse(src, batch.src_f0, target)


def build_model(cfg, voices, seed: int = 0) -> VoiceModel:
    return VoiceModel(cfg, voices, seed)


def build_discriminators_for(cfg, seed: int = 0) -> DiscriminatorBank:
    return build_discriminators(cfg.discriminator, seed)
