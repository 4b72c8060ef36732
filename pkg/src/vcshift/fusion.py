"""Conditioning sequence assembly.

Each frame is the concatenation, in this order, of: source content
embedding, source f0 channels, target embedding (or broadcast speaker
vector), target f0 channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoder import INIT_STD, ContentEmbedding
from .errors import AlignmentError, ConfigError, UnknownSpeakerError
from .pitch import F0Contour, normalize_f0

F0_CHANNELS = 2
PART_NAMES = ("source_embedding", "source_f0", "target_embedding", "target_f0")


@dataclass(frozen=True)
class FusionLayout:
    spans: tuple  # ((name, start, stop), ...) in concatenation order

    @classmethod
    def build(cls, source_width: int, target_width: int) -> "FusionLayout":
        widths = (source_width, F0_CHANNELS, target_width, F0_CHANNELS)
        spans, start = [], 0
        for name, w in zip(PART_NAMES, widths):
            spans.append((name, start, start + w))
            start += w
        return cls(tuple(spans))

    @property
    def width(self) -> int:
        return self.spans[-1][2]

    def span(self, name: str) -> slice:
        for n, a, b in self.spans:
            if n == name:
                return slice(a, b)
        raise KeyError(name)

    def describe(self) -> str:
        return ";".join(f"{n}:{a}:{b}" for n, a, b in self.spans)

    @classmethod
    def parse(cls, text: str) -> "FusionLayout":
        spans = []
        for item in text.split(";"):
            n, a, b = item.split(":")
            spans.append((n, int(a), int(b)))
        return cls(tuple(spans))


@dataclass
class FusionSequence:
    frames: torch.Tensor  # (..., T, F)
    layout: FusionLayout

    def part(self, name: str) -> torch.Tensor:
        return self.frames[..., self.layout.span(name)]

    def __len__(self):
        return self.frames.shape[-2]


@dataclass
class ReferenceTarget:
    """Target taken from reference audio: per-frame embeddings and f0 channels."""
    embedding: object  # (..., T, H)
    f0_channels: object  # (..., T, 2)


@dataclass
class SpeakerTarget:
    """Target taken from the speaker table plus a pitch-level statistic."""
    vector: object  # (..., S)
    median_log_f0: object  # scalar or (...,)


class SpeakerTable(nn.Module):
    """Learned per-speaker vectors; rows follow ``keys`` order."""

    def __init__(self, keys, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.keys = list(keys)
        self.dim = dim
        weight = torch.empty(len(self.keys), dim)
        nn.init.normal_(weight, 0.0, INIT_STD, generator=generator)
        self.weight = nn.Parameter(weight)

    def index(self, speaker_id: str) -> int:
        try:
            return self.keys.index(speaker_id)
        except ValueError:
            raise UnknownSpeakerError(f"unknown speaker id {speaker_id!r}") from None

    def forward(self, idx: torch.Tensor) -> torch.Tensor:
        return self.weight[idx]

    def add(self, keys, generator: torch.Generator | None = None) -> None:
        """Append rows for unseen keys (used when fine-tuning introduces new voices)."""
        new = [k for k in keys if k not in self.keys]
        if not new:
            return
        rows = torch.empty(len(new), self.dim, dtype=self.weight.dtype)
        nn.init.normal_(rows, 0.0, INIT_STD, generator=generator)
        self.weight = nn.Parameter(torch.cat([self.weight.data, rows]))
        self.keys += new


def speaker_vector(table: SpeakerTable, speaker_id: str) -> torch.Tensor:
    return table.weight[table.index(speaker_id)]


def align_frames(emb, f0: F0Contour):
    """Truncate an embedding and an f0 contour to their common length.
    Returns (embedding (T, H), f0 channels (T, 2))."""
    frames = emb.frames if isinstance(emb, ContentEmbedding) else emb
    n_emb, n_f0 = len(frames), len(f0)
    if abs(n_emb - n_f0) > 1:
        raise AlignmentError(f"embedding has {n_emb} frames but f0 has {n_f0}; check that both use the same hop")
    n = min(n_emb, n_f0)
    return frames[:n], normalize_f0(f0.truncate(n))


def _tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def fuse(src_emb, src_f0, target) -> FusionSequence:
    """Concatenate source embedding (..., T, H), source f0 channels (..., T, 2)
    and a :class:`ReferenceTarget` or :class:`SpeakerTarget` per frame."""
    src_emb = _tensor(src_emb)
    src_f0 = _tensor(src_f0, src_emb)
    t = src_emb.shape[-2]
    if src_f0.shape[-2] != t or src_f0.shape[-1] != F0_CHANNELS:
        raise AlignmentError(f"source f0 channels {tuple(src_f0.shape)} do not match {t} frames x 2")
    if isinstance(target, ReferenceTarget):
        tgt_emb = _tensor(target.embedding, src_emb)
        tgt_f0 = _tensor(target.f0_channels, src_emb)
        if tgt_emb.shape[-2] != t or tgt_f0.shape[-2] != t:
            raise AlignmentError("target parts must have the same frame count as the source")
        if tgt_f0.shape[-1] != F0_CHANNELS:
            raise AlignmentError("target f0 needs 2 channels")
    elif isinstance(target, SpeakerTarget):
        vec = _tensor(target.vector, src_emb)
        lead = src_emb.shape[:-2]
        tgt_emb = vec.unsqueeze(-2).expand(*lead, t, vec.shape[-1])
        level = _tensor(target.median_log_f0, src_emb).reshape(*lead, 1, 1)
        tgt_f0 = torch.cat([level, torch.ones_like(level)], dim=-1).expand(*lead, t, F0_CHANNELS)
    else:
        raise ConfigError(f"unsupported target {type(target).__name__}")
    layout = FusionLayout.build(src_emb.shape[-1], tgt_emb.shape[-1])
    frames = torch.cat([src_emb, src_f0, tgt_emb, tgt_f0], dim=-1)
    return FusionSequence(frames, layout)


TARGET_MODES = ("speaker_id", "reference")


@dataclass(frozen=True)
class FusionConfig:
    target_mode: str = "speaker_id"
    speaker_dim: int = 0  # 0 means "same as encoder.hidden_size"

    def validate(self, hidden_size: int | None = None) -> "FusionConfig":
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"fusion.target_mode must be one of {TARGET_MODES}")
        if hidden_size is not None and self.speaker_dim not in (0, hidden_size):
            raise ConfigError("fusion.speaker_dim must equal encoder.hidden_size (or 0)")
        return self

    def resolved_dim(self, hidden_size: int) -> int:
        return self.speaker_dim or hidden_size
